// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "ovst/sim/ablation.hpp"

namespace ovst {
namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.world.num_labeled = 16;
  c.world.num_unlabeled = 24;
  c.world.num_test = 12;
  c.train.iterations = 60;
  c.train.eval_interval = 10;
  c.train.ema_momentum = 0.99;
  return c;
}

std::string log_text(const ExperimentLog& log) {
  std::ostringstream o;
  write_losses_csv(o, log);
  write_eval_csv(o, log);
  return o.str();
}

TEST(World, SeedRepeatIsIdentical) {
  const auto c = small_config().world;
  const auto a = generate_world<HBox>(c), b = generate_world<HBox>(c);
  EXPECT_EQ(a.class_means, b.class_means);
  EXPECT_EQ(a.text, b.text);
  ASSERT_EQ(a.truth.size(), b.truth.size());
  for (const auto& [id, objs] : a.truth) {
    ASSERT_EQ(objs.size(), b.truth.at(id).size());
    for (std::size_t i = 0; i < objs.size(); ++i) {
      EXPECT_EQ(objs[i].box, b.truth.at(id)[i].box);
      EXPECT_EQ(objs[i].category_id, b.truth.at(id)[i].category_id);
    }
  }
  auto c2 = c;
  c2.seed += 1;
  EXPECT_NE(generate_world<HBox>(c2).class_means, a.class_means);
}

TEST(World, SplitsHideNovelAndUnlabeledAnnotations) {
  const auto w = generate_world<HBox>(small_config().world);
  for (const auto& r : w.dataset.labeled)
    for (const auto& i : r.instances) EXPECT_TRUE(w.dataset.vocabulary.is_base(i.category_id));
  for (const auto& r : w.dataset.unlabeled) {
    EXPECT_TRUE(r.instances.empty());
    EXPECT_EQ(w.dataset.hidden.at(r.image_id).size(), w.truth.at(r.image_id).size());
  }
  EXPECT_EQ(w.test.size(), 12u);
}

TEST(World, ClassSeparationMatchesConfiguration) {
  auto c = small_config().world;
  c.class_separation = 6.0;
  c.feature_std = 0.5;
  const auto w = generate_world<HBox>(c);
  const Eigen::Index C = w.class_means.rows();
  double closest = 1e300;
  for (Eigen::Index i = 0; i < C; ++i)
    for (Eigen::Index j = i + 1; j < C; ++j) closest = std::min(closest, (w.class_means.row(i) - w.class_means.row(j)).norm());
  EXPECT_GE(closest / c.feature_std, 6.0 - 1e-9);
  // Empirical: exact-box regions of two classes, between-mean distance over
  // the per-dimension within-class std.
  Rng rng(3);
  std::vector<Instance<HBox>> objs{{{100, 100, 140, 140}, 0, false}, {{300, 300, 340, 340}, 1, false}};
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(c.semantic_dim), m1 = m0;
  double var = 0.0;
  const int n = 4000;
  std::vector<Eigen::VectorXd> xs0;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x0 = region_feature(w, objs, objs[0].box, rng).head(c.semantic_dim);
    m0 += x0 / n;
    m1 += region_feature(w, objs, objs[1].box, rng).head(c.semantic_dim) / n;
    xs0.push_back(x0);
  }
  for (const auto& x : xs0) var += (x - m0).squaredNorm() / (n * c.semantic_dim);
  const double ratio = (m0 - m1).norm() / std::sqrt(var);
  const double expect = (w.class_means.row(0) - w.class_means.row(1)).norm() / c.feature_std;
  EXPECT_NEAR(ratio, expect, 0.05 * expect);
}

TEST(World, ProposalsAndOracles) {
  const auto w = generate_world<HBox>(small_config().world);
  const auto& objs = w.truth.begin()->second;
  Rng rng(1);
  const auto props = make_proposals(w, objs, rng);
  EXPECT_EQ(props.size(), objs.size() * 6 + 10);
  for (const auto& p : props) {
    EXPECT_EQ(p.feature.size(), w.feature_dim());
    EXPECT_GE(p.rpn_score, 0.0);
    EXPECT_LE(p.rpn_score, 1.0);
  }
  EXPECT_GT(rpn_score(w, objs, objs[0].box), 0.99);
  const auto ext = external_probs(w, objs, objs[0].box, rng);
  Eigen::Index best;
  ext.maxCoeff(&best);
  EXPECT_EQ(best, objs[0].category_id);
  EXPECT_GT(ext[best], 0.8);
  const HBox far{0, 0, 5, 5};
  external_probs(w, objs, far, rng).maxCoeff(&best);
  EXPECT_EQ(best, ext.size() - 1);
}

TEST(World, InvalidConfigRejected) {
  auto c = small_config().world;
  c.feature_std = 0;
  EXPECT_THROW(generate_world<HBox>(c), ConfigError);
}

TEST(Training, SameSeedGivesIdenticalLogsAcrossThreadCounts) {
  auto c = small_config();
  const auto w = generate_world<HBox>(c.world);
  const auto a = run_training(w, c);
  const auto b = run_training(w, c);
  c.train.threads = 3;
  const auto d = run_training(w, c);
  EXPECT_EQ(log_text(a.log), log_text(b.log));
  EXPECT_EQ(log_text(a.log), log_text(d.log));
  EXPECT_EQ(pack(a.model.student), pack(d.model.student));
}

TEST(Training, NoUnsupervisedWeightsReproducesSupervisedOnly) {
  auto c = small_config();
  const auto w = generate_world<HBox>(c.world);
  auto sup = c;
  sup.train.beta = 0.0, sup.train.gamma = 0.0, sup.train.external_teacher = false;
  auto zero = c;
  zero.train.beta = 0.0, zero.train.gamma = 0.0;  // queue still fills but is never trained on
  const auto a = run_training(w, sup), b = run_training(w, zero);
  EXPECT_EQ(pack(a.model.student), pack(b.model.student));
  EXPECT_EQ(pack(a.model.teacher), pack(b.model.teacher));
  EXPECT_GT(b.queue.size(), 0u);
}

TEST(Training, QueueGrowsMonotonicallyAndHoldsOnlyConfidentLabels) {
  auto c = small_config();
  const auto w = generate_world<HBox>(c.world);
  const auto r = run_training(w, c);
  std::size_t prev = 0;
  for (const auto& it : r.log.iterations) {
    EXPECT_GE(it.queue_size, prev);
    prev = it.queue_size;
  }
  EXPECT_TRUE(r.queue.index_consistent());
  for (const auto& [id, e] : r.queue.entries())
    for (const auto& l : e.labels) EXPECT_GE(l.confidence, c.train.p0);
  for (std::size_t i = 1; i < r.log.evals.size(); ++i) EXPECT_GT(r.log.evals[i].iteration, r.log.evals[i - 1].iteration);
}

TEST(Training, ZeroNovelCategoriesDegeneratesToSemiSupervised) {
  auto c = small_config();
  c.world.num_novel = 0;
  const auto w = generate_world<HBox>(c.world);
  const auto r = run_training(w, c);
  EXPECT_EQ(r.log.evals.back().queue_novel.num_labels, 0u);
  EXPECT_EQ(r.log.final_report.map_novel, 0.0);
  EXPECT_GT(r.log.final_report.map_base, 0.0);
}

TEST(Training, ResumeFromCheckpointFilesIsBitwiseIdentical) {
  auto c = small_config();
  const auto w = generate_world<HBox>(c.world);
  const auto full = run_training(w, c);
  const auto half = run_training<HBox>(w, c, nullptr, 30);
  EXPECT_EQ(half.model.iteration, 30);
  std::stringstream model, queue;
  write_model_checkpoint(model, half.model);
  write_queue_checkpoint(queue, half.queue);
  TrainingResult<HBox> reloaded{half.log, read_model_checkpoint(model),
                                read_queue_checkpoint<HBox>(queue, QueueOptions{c.train.p0, 0, {}})};
  const auto rest = run_training(w, c, &reloaded);
  EXPECT_EQ(pack(rest.model.student), pack(full.model.student));
  EXPECT_EQ(log_text(rest.log), log_text(full.log));
}

TEST(Training, OrientedBoxesRun) {
  auto c = config_from_json(nlohmann::json{{"box", "obox"}});
  c.world = small_config().world;
  c.train = small_config().train;
  c.train.iterations = 20;
  const auto log = run_experiment(c);
  EXPECT_EQ(log.iterations.size(), 20u);
  EXPECT_EQ(c.regression_selection.strategy, Strategy::kSjv);
}

TEST(Training, LabelFractionSubsamplesDeterministically) {
  const auto a = labeled_subset(60, 0.34, 5), b = labeled_subset(60, 0.34, 5);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_EQ(labeled_subset(60, 1.0, 5).size(), 60u);
  EXPECT_EQ(labeled_subset(60, 0.5, 5).size(), 30u);
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  auto c = small_config();
  c.train.background = BackgroundMode::kNormalizedMean;
  c.queue_selection.strategy = Strategy::kRjv;
  const auto j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
  EXPECT_THROW(config_from_json(nlohmann::json{{"train", {{"lrr", 0.1}}}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"train", {{"iterations", "many"}}}}), ConfigError);
  auto bad = c;
  bad.train.ema_momentum = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Ablation, GridShapes) {
  EXPECT_EQ(builtin_grid("loss_weights").size(), 4u);
  EXPECT_EQ(builtin_grid("loss_weights")[2].label, "1-2-1");
  EXPECT_EQ(builtin_grid("label_fraction").size(), 3u);
  EXPECT_EQ(builtin_grid("flows").size(), 3u);
  EXPECT_THROW(builtin_grid("nope"), ConfigError);
  auto c = small_config();
  c.train.iterations = 10;
  const auto rows = run_ablation(c, {{"only", nlohmann::json::object()}});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].label, "only");
  const auto lw = run_ablation(c, builtin_grid("loss_weights"));
  std::ostringstream out;
  write_ablation_csv(out, lw);
  int lines = 0;
  for (char ch : out.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 5);
  EXPECT_EQ(apply_patch(c, builtin_grid("label_fraction")[0].patch).train.label_fraction, 0.34);
}

TEST(Output, WritesExperimentFiles) {
  auto c = small_config();
  c.train.iterations = 10;
  const auto dir = std::filesystem::temp_directory_path() / "ovst_sim_out";
  std::filesystem::remove_all(dir);
  run_experiment(c, &dir);
  for (const char* f : {"losses.csv", "eval.csv", "queue_counts.csv", "summary.json", "report.csv", "queue.jsonl",
                        "queue_labels.csv", "model.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  EXPECT_TRUE(std::filesystem::exists(dir / "pr" / "pr_plane.csv"));
  load_model_checkpoint(dir / "model.ckpt");
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ovst
