// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "model_fixtures.hpp"
#include "ovst/model/model.hpp"

namespace ovst {
namespace {

using testing::all_four_terms;
using testing::max_block_relative_error;
using testing::random_samples;
using testing::random_student;
using testing::random_text;
using testing::random_vec;

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(2024);
  for (int draw = 0; draw < 20; ++draw) {
    const auto mode = static_cast<BackgroundMode>(draw % 3);
    const auto p = random_student(mode, rng);
    const auto t = all_four_terms(p, rng);
    EXPECT_LT(max_block_relative_error(p, t), 1e-4) << "draw " << draw;
  }
}

TEST(Gradient, ZeroBackgroundHasNoBackgroundBlock) {
  Rng rng(1);
  auto p = random_student(BackgroundMode::kZero, rng);
  EXPECT_EQ(num_trainable(p), 6 * 7 + 4 * 7 + 4 + 1);
  auto l = random_student(BackgroundMode::kLearnable, rng);
  EXPECT_EQ(num_trainable(l), 6 * 7 + 4 * 7 + 4 + 6 + 1);
}

TEST(Gradient, VanishesAtZeroLossPoint) {
  Rng rng(3);
  auto p = random_student(BackgroundMode::kZero, rng);
  RegionSample<HBox> s{{0, 0, 10, 10}, random_vec(7, rng), kBackgroundLabel, HBox{1, 1, 11, 11}, 1.0};
  const Eigen::VectorXd d = encoded_target<HBox>(s.box, *s.target);
  p.regressor.setZero();
  p.reg_bias = d;
  std::vector<RegionSample<HBox>> v{s};
  Eigen::VectorXd g;
  EXPECT_DOUBLE_EQ(loss_and_grad(p, regression_terms<HBox>(v), &g), 0.0);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, ZeroProjectorIdentityProjectorAndZeroDelta) {
  Rng rng(5);
  auto text = random_text(3, 4, rng);
  auto p = make_student(make_head(text, BackgroundMode::kZero), 4, 4, 1);
  p.projector.setZero();
  const auto x = random_vec(4, rng);
  const auto f = forward(p, x, HBox{1, 2, 5, 9});
  EXPECT_EQ(f.scores.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(f.box, (HBox{1, 2, 5, 9}));
  EXPECT_NEAR((predict_probs(f.scores).array() - 0.25).abs().maxCoeff(), 0.0, 1e-15);
  p.projector.setIdentity();
  for (int j = 0; j < 3; ++j) {
    Eigen::Index best;
    region_scores(p, text.row(j).transpose()).maxCoeff(&best);
    EXPECT_EQ(best, j);
  }
  EXPECT_THROW(forward(p, random_vec(5, rng), HBox{0, 0, 1, 1}), InvariantError);
  EXPECT_THROW(forward(p, x, OBox{0, 0, 1, 1, 0}), InvariantError);
}

TEST(Forward, ArgmaxInvariantToPositiveFeatureScaling) {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const auto p = random_student(static_cast<BackgroundMode>(t % 3), rng);
    const auto x = random_vec(7, rng);
    Eigen::Index a, b;
    region_scores(p, x).maxCoeff(&a);
    region_scores(p, x * rng.uniform(0.01, 100)).maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
}

TEST(BoxCoder, RoundTrip) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const HBox a{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(11, 30), rng.uniform(11, 30)};
    const HBox b{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(11, 30), rng.uniform(11, 30)};
    const auto d = encode_deltas(a, b);
    const auto r = apply_deltas(a, d);
    EXPECT_NEAR(r.x1, b.x1, 1e-9);
    EXPECT_NEAR(r.y2, b.y2, 1e-9);
    const OBox o{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(1, 9), rng.uniform(1, 9), rng.uniform(-1.5, 1.5)};
    const OBox q{rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(1, 9), rng.uniform(1, 9), rng.uniform(-1.5, 1.5)};
    const auto e = encode_deltas(o, q);
    const auto s = apply_deltas(o, e);
    EXPECT_NEAR(s.cx, q.cx, 1e-9);
    EXPECT_NEAR(s.cy, q.cy, 1e-9);
    EXPECT_NEAR(s.w, q.w, 1e-9);
    EXPECT_NEAR(iou(s, q), 1.0, 1e-9);
  }
}

TEST(Losses, SupervisedHandCase) {
  // Two categories, zero background, tau 1, projector identity. Feature
  // along t_0: scores (1, 0, 0) -> CE = log(e + 2) - 1.
  Eigen::MatrixXd text(2, 2);
  text << 1, 0, 0, 1;
  auto p = make_student(make_head(text, BackgroundMode::kZero, 0, 1.0), 2, 4, 0);
  p.projector.setIdentity();
  RegionSample<HBox> s{{0, 0, 10, 10}, Eigen::Vector2d(3, 0), 0, HBox{0, 0, 10, 10}, 1.0};
  std::vector<RegionSample<HBox>> one{s};
  EXPECT_NEAR(loss_supervised<HBox>(p, one), std::log(std::exp(1.0) + 2.0) - 1.0, 1e-15);
  // Target shifted by one box width in x: L1 = |1| / 4.
  one[0].target = HBox{10, 0, 20, 10};
  EXPECT_NEAR(loss_supervised<HBox>(p, one), std::log(std::exp(1.0) + 2.0) - 1.0 + 0.25, 1e-15);
  EXPECT_NEAR(loss_unsup_reg<HBox>(p, one), 0.25, 1e-15);
  std::vector<RegionSample<HBox>> none;
  EXPECT_EQ(loss_unsup_reg<HBox>(p, none), 0.0);
  EXPECT_THROW(loss_supervised<HBox>(p, none), InvariantError);
}

TEST(Losses, SupervisedMeanIsInvariantToDuplication) {
  Rng rng(7);
  const auto p = random_student(BackgroundMode::kLearnable, rng);
  auto s = random_samples(p, rng, 9, 0.5);
  const double a = loss_supervised<HBox>(p, s);
  auto twice = s;
  twice.insert(twice.end(), s.begin(), s.end());
  EXPECT_NEAR(loss_supervised<HBox>(p, twice), a, 1e-13);
  EXPECT_NEAR(loss_unsup_cls<HBox>(p, twice), loss_unsup_cls<HBox>(p, s), 1e-13);
}

TEST(Losses, WeightedBackgroundHandCase) {
  Eigen::MatrixXd text(2, 2);
  text << 1, 0, 0, 1;
  auto p = make_student(make_head(text, BackgroundMode::kZero, 0, 1.0), 2, 4, 0);
  p.projector.setIdentity();
  auto ce = [&](const Eigen::VectorXd& x, Eigen::Index label) {
    const auto s = region_scores(p, x);
    return std::log(s.array().exp().sum()) - s[label];
  };
  const Eigen::Vector2d f0(1, 0), f1(0, 2), b0(1, 1), b1(-1, 0.5);
  std::vector<RegionSample<HBox>> s{{{}, f0, 0, {}, 1.0}, {{}, f1, 1, {}, 1.0},
                                    {{}, b0, kBackgroundLabel, {}, 0.2}, {{}, b1, kBackgroundLabel, {}, 0.6}};
  const double expect = 0.5 * (ce(f0, 0) + ce(f1, 1)) + 0.25 * ce(b0, 2) + 0.75 * ce(b1, 2);
  EXPECT_NEAR(loss_unsup_cls<HBox>(p, s), expect, 1e-15);
  EXPECT_NEAR(loss_queue_cls<HBox>(p, s), expect, 1e-15);
  // Uniform background scores give equal weights.
  s[2].bg_score = s[3].bg_score = 0.4;
  EXPECT_NEAR(loss_unsup_cls<HBox>(p, s), 0.5 * (ce(f0, 0) + ce(f1, 1)) + 0.5 * (ce(b0, 2) + ce(b1, 2)), 1e-15);
  // No background: foreground mean only.
  s.resize(2);
  EXPECT_NEAR(loss_unsup_cls<HBox>(p, s), 0.5 * (ce(f0, 0) + ce(f1, 1)), 1e-15);
  // Regression flag off: classification only even when targets exist.
  s[0].target = HBox{1, 1, 2, 2};
  s[0].box = HBox{0, 0, 1, 1};
  EXPECT_EQ(loss_queue_cls<HBox>(p, s, false), loss_unsup_cls<HBox>(p, s));
  EXPECT_GT(loss_queue_cls<HBox>(p, s, true), loss_unsup_cls<HBox>(p, s));
}

TEST(Losses, TotalIsLinear) {
  EXPECT_EQ(total_loss(1.5, 2, 3, 0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(1.5, 2, 3, 1, 2, 1), 1.5 + 4 + 3);
  EXPECT_DOUBLE_EQ(total_loss(3.0, 2, 3, 1, 2, 1) - total_loss(1.5, 2, 3, 1, 2, 1), 1.5);
  EXPECT_THROW(total_loss(NAN, 0, 0, 1, 1, 1), InvariantError);
  EXPECT_THROW(total_loss(1, 0, 0, -1, 1, 1), ConfigError);
}

TEST(Optim, SgdSteps) {
  Rng rng(9);
  auto p = random_student(BackgroundMode::kZero, rng);
  const Eigen::VectorXd theta0 = pack(p);
  SgdState st;
  sgd_step(p, Eigen::VectorXd::Zero(theta0.size()), st, {0.1, 0.9, 0.0});
  EXPECT_EQ(pack(p), theta0);
  // Hand-computed two steps: v1 = g + wd t0, t1 = t0 - lr v1;
  // v2 = mu v1 + g + wd t1, t2 = t1 - lr v2. log_tau is not decayed.
  const Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(theta0.size(), -1, 1);
  const SgdConfig cfg{0.01, 0.9, 1e-4};
  SgdState s2;
  StudentParams q = p;
  sgd_step(q, g, s2, cfg);
  sgd_step(q, g, s2, cfg);
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(theta0.size());
  mask[theta0.size() - 1] = 0.0;
  const Eigen::VectorXd v1 = g + 1e-4 * mask.cwiseProduct(theta0);
  const Eigen::VectorXd t1 = theta0 - 0.01 * v1;
  const Eigen::VectorXd v2 = 0.9 * v1 + g + 1e-4 * mask.cwiseProduct(t1);
  EXPECT_LT((pack(q) - (t1 - 0.01 * v2)).cwiseAbs().maxCoeff(), 1e-15);
  // momentum 0 is plain SGD.
  StudentParams r = p;
  SgdState s3;
  sgd_step(r, g, s3, {0.5, 0.0, 0.0});
  sgd_step(r, g, s3, {0.5, 0.0, 0.0});
  EXPECT_LT((pack(r) - (theta0 - g)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Optim, EmaLaw) {
  Rng rng(10);
  auto s = random_student(BackgroundMode::kLearnable, rng);
  auto t = s;
  ema_update(t, s, 0.0);
  EXPECT_EQ(pack(t), pack(s));
  unpack(t, Eigen::VectorXd::Ones(num_trainable(t)));
  unpack(s, Eigen::VectorXd::Zero(num_trainable(s)));
  ema_update(t, s, 0.9);
  EXPECT_DOUBLE_EQ(pack(t)[0], 0.9);
  for (double alpha : {0.0, 0.9, 0.999}) {
    auto teacher = random_student(BackgroundMode::kLearnable, rng);
    auto student = teacher;
    unpack(student, pack(teacher) + Eigen::VectorXd::Constant(num_trainable(teacher), 0.7));
    const Eigen::VectorXd gap0 = (pack(teacher) - pack(student)).cwiseAbs();
    for (int step = 1; step <= 1000; ++step) {
      ema_update(teacher, student, alpha);
      const Eigen::VectorXd gap = (pack(teacher) - pack(student)).cwiseAbs();
      ASSERT_LT((gap - std::pow(alpha, step) * gap0).cwiseAbs().maxCoeff(), 1e-10) << alpha << " " << step;
    }
  }
  EXPECT_THROW(ema_update(t, s, 1.0), ConfigError);
  auto other = random_student(BackgroundMode::kZero, rng);
  EXPECT_THROW(ema_update(t, other, 0.5), InvariantError);
}

TEST(Checkpoint, ReloadGivesBitwiseIdenticalNextStep) {
  Rng rng(11);
  ModelCheckpoint c;
  c.student = random_student(BackgroundMode::kLearnable, rng);
  c.teacher = c.student;
  const auto terms = all_four_terms(c.student, rng);
  Eigen::VectorXd g;
  loss_and_grad(c.student, terms, &g);
  sgd_step(c.student, g, c.optimizer, {});
  ema_update(c.teacher, c.student, 0.99);
  c.iteration = 1;
  std::stringstream buf;
  write_model_checkpoint(buf, c);
  auto r = read_model_checkpoint(buf);
  EXPECT_EQ(r.iteration, 1);
  auto step = [&](ModelCheckpoint& m) {
    Eigen::VectorXd gg;
    loss_and_grad(m.student, terms, &gg);
    sgd_step(m.student, gg, m.optimizer, {});
    ema_update(m.teacher, m.student, 0.99);
  };
  step(c);
  step(r);
  EXPECT_EQ(pack(c.student), pack(r.student));
  EXPECT_EQ(pack(c.teacher), pack(r.teacher));
  EXPECT_EQ(c.optimizer.velocity, r.optimizer.velocity);
  std::stringstream bad("ovst-model 1\niteration 3\nparams student\n");
  EXPECT_THROW(read_model_checkpoint(bad), ParseError);
}

std::vector<Proposal<HBox>> proposals_on(const StudentParams& p, Rng& rng) {
  std::vector<Proposal<HBox>> out;
  for (int i = 0; i < 8; ++i) {
    const double x = 30.0 * (i % 4), y = 30.0 * (i / 4);
    out.push_back({{x, y, x + 20, y + 20}, random_vec(p.feature_dim(), rng), i < 4 ? 0.99 : 0.1});
  }
  return out;
}

TEST(Consistency, NoAugmentationAndSelfTeacherIsAtTheForegroundMinimum) {
  Rng rng(12);
  const auto p = random_student(BackgroundMode::kLearnable, rng);
  const auto props = proposals_on(p, rng);
  const Augmentation none{0, 0, 0, 0};
  Rng a(1);
  const auto r = consistency_samples<HBox>(p, props, none, {}, a);
  ASSERT_EQ(r.pseudo.size(), 4u);
  // Each pseudo label is the teacher's own top foreground class, so the
  // student (== teacher) CE on it is as small as any other foreground label.
  for (const auto& s : r.samples) {
    if (s.label == kBackgroundLabel) continue;
    const auto sc = region_scores(p, s.feature);
    for (Eigen::Index c = 0; c < p.num_categories(); ++c) EXPECT_GE(sc[s.label], sc[c]);
  }
}

TEST(Consistency, GroundTruthPseudoLabelsMatchSupervisedAssignment) {
  Rng rng(13);
  const auto p = random_student(BackgroundMode::kZero, rng);
  const auto props = proposals_on(p, rng);
  std::vector<LabeledBox<HBox>> gt{{{0, 0, 20, 20}, 1, 1.0}, {{60, 30, 80, 50}, 2, 1.0}};
  std::vector<Eigen::VectorXd> tp(props.size(), Eigen::VectorXd::Constant(p.num_categories() + 1, 0.2));
  auto samples = assign_to_pseudo_labels<HBox>(props, gt, tp, {}, 0.5);
  // Supervised-path assignment by hand.
  std::vector<RegionSample<HBox>> sup;
  for (const auto& pr : props) {
    RegionSample<HBox> s{pr.box, pr.feature, kBackgroundLabel, {}, 1.0};
    for (const auto& g : gt)
      if (iou(pr.box, g.box) >= 0.5) s.label = g.category, s.target = g.box;
    sup.push_back(s);
  }
  ASSERT_EQ(samples.size(), sup.size());
  for (std::size_t i = 0; i < sup.size(); ++i) {
    EXPECT_EQ(samples[i].label, sup[i].label);
    EXPECT_EQ(samples[i].target.has_value(), sup[i].target.has_value());
  }
  // With uniform background scores both paths weight background equally;
  // the foreground CE and L1 coincide when every proposal is foreground.
  std::vector<RegionSample<HBox>> fg_u, fg_s;
  for (std::size_t i = 0; i < sup.size(); ++i)
    if (sup[i].label != kBackgroundLabel) fg_u.push_back(samples[i]), fg_s.push_back(sup[i]);
  auto terms = weighted_cls_terms<HBox>(fg_u, p.num_categories());
  terms.append(regression_terms<HBox>(fg_u));
  EXPECT_NEAR(loss_value(p, terms), loss_supervised<HBox>(p, fg_s), 1e-14);
}

TEST(Consistency, StrongNoiseRaisesLossOnAverage) {
  Rng rng(14);
  auto p = random_student(BackgroundMode::kLearnable, rng);
  const auto props = proposals_on(p, rng);
  double noisy = 0.0, clean = 0.0;
  for (int seed = 0; seed < 200; ++seed) {
    Rng a(static_cast<std::uint64_t>(seed)), b(static_cast<std::uint64_t>(seed));
    noisy += consistency_step<HBox>(p, p, props, {0.0, 0, 1.0, 0.2}, {}, a);
    clean += consistency_step<HBox>(p, p, props, {0.0, 0, 0.0, 0.0}, {}, b);
  }
  EXPECT_GT(noisy, clean);
}

TEST(Detect, ThresholdsOnForegroundProbability) {
  Eigen::MatrixXd text(2, 2);
  text << 1, 0, 0, 1;
  auto p = make_student(make_head(text, BackgroundMode::kLearnable, 0, 0.05), 2, 4, 0);
  p.projector.setIdentity();
  p.head.background_vec = Eigen::Vector2d(-1, -1).normalized();
  std::vector<Proposal<HBox>> props{{{0, 0, 10, 10}, Eigen::Vector2d(1, 0), 1.0},
                                    {{1, 0, 11, 10}, Eigen::Vector2d(1, 0.1), 1.0},
                                    {{50, 50, 60, 60}, Eigen::Vector2d(-1, -1), 1.0}};
  const auto d = detect<HBox>(p, 7, props, {});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].category, 0);
  EXPECT_EQ(d[0].image_id, 7);
}

}  // namespace
}  // namespace ovst
