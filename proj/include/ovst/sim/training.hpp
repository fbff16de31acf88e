// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovst/classifier/head.hpp"
#include "ovst/core/parallel.hpp"
#include "ovst/core/rng.hpp"
#include "ovst/core/text.hpp"
#include "ovst/eval/evaluation.hpp"
#include "ovst/eval/io.hpp"
#include "ovst/model/model.hpp"
#include "ovst/queue/label_queue.hpp"
#include "ovst/selection/selection.hpp"
#include "ovst/sim/config.hpp"
#include "ovst/sim/world.hpp"

namespace ovst {

struct IterationLog {
  int iteration = 0;
  double ls = 0.0, lu = 0.0, ld = 0.0, total = 0.0;
  std::size_t pseudo_boxes = 0;
  std::size_t pushed = 0;
  std::size_t queue_size = 0;
  std::size_t queue_labels = 0;
};

struct EvalLog {
  int iteration = 0;
  double student_novel_recall = 0.0;
  double student_base_recall = 0.0;
  double student_novel_accuracy = 0.0;
  double teacher_novel_recall = 0.0;
  double teacher_novel_accuracy = 0.0;
  QueueQuality queue_novel;
  std::map<int, std::size_t> queue_counts;
};

struct ExperimentLog {
  std::vector<IterationLog> iterations;
  std::vector<EvalLog> evals;
  EvalReport final_report;
  double final_novel_accuracy = 0.0;
};

template <typename Box>
struct TrainingResult {
  ExperimentLog log;
  ModelCheckpoint model;
  DynamicLabelQueue<Box> queue;
};

/// Stream tags; every random draw in a run comes from
/// derive_seed(train seed, {tag, iteration, slot}).
enum StreamTag : std::uint64_t {
  kInitStream = 1,
  kSubsetStream = 2,
  kLabeledPick = 10,
  kLabeledImage = 11,
  kUnlabeledPick = 20,
  kUnlabeledImage = 21,
  kRegressionSelect = 22,
  kQueueSelect = 23,
  kExternal = 24,
  kQueuePick = 30,
  kQueueImage = 31,
  kTestProposals = 40,
  kTestRegions = 41,
};

/// Labeled images kept under `fraction`: a seeded permutation prefix.
inline std::vector<std::size_t> labeled_subset(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {kSubsetStream}));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  idx.resize(std::min(keep, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename Box>
StudentParams initial_student(const World<Box>& w, const TrainConfig& t) {
  auto head = make_head(w.text, t.background, derive_seed(t.seed, {kInitStream, 0}), t.temperature);
  return make_student(std::move(head), w.feature_dim(), BoxTraits<Box>::kDim, derive_seed(t.seed, {kInitStream, 1}),
                      t.learn_temperature);
}

/// Held-out measurements of one network on the test split.
struct NetworkScore {
  double novel_recall = 0.0;
  double base_recall = 0.0;
  double novel_accuracy = 0.0;
};

template <typename Box>
struct TestBench {
  std::vector<std::vector<Proposal<Box>>> proposals;  // per test image
  std::vector<std::vector<Eigen::VectorXd>> regions;  // per object, at its exact box
  GroundTruth<Box> truth;

  TestBench(const World<Box>& w, std::uint64_t seed, std::size_t threads) {
    const std::size_t n = w.test.size();
    proposals.resize(n);
    regions.resize(n);
    parallel_for(n, threads, [&](std::size_t i) {
      const auto& r = w.test[i];
      Rng pr(derive_seed(seed, {kTestProposals, i}));
      proposals[i] = make_proposals(w, r.instances, pr);
      Rng rr(derive_seed(seed, {kTestRegions, i}));
      for (const auto& o : r.instances) regions[i].push_back(region_feature(w, r.instances, o.box, rr));
    });
    for (const auto& r : w.test) truth[r.image_id] = r.instances;
  }

  std::vector<Detection<Box>> detections(const World<Box>& w, const StudentParams& p, const DetectConfig& d,
                                         std::size_t threads) const {
    std::vector<std::vector<Detection<Box>>> per(w.test.size());
    parallel_for(w.test.size(), threads, [&](std::size_t i) {
      per[i] = detect<Box>(p, w.test[i].image_id, proposals[i], d);
    });
    std::vector<Detection<Box>> out;
    for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
    return out;
  }

  /// Top foreground category on exact object regions, over novel objects.
  double novel_accuracy(const World<Box>& w, const StudentParams& p) const {
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < w.test.size(); ++i) {
      const auto& insts = w.test[i].instances;
      for (std::size_t k = 0; k < insts.size(); ++k) {
        if (!w.dataset.vocabulary.is_novel(insts[k].category_id)) continue;
        const Eigen::VectorXd s = region_scores(p, regions[i][k]);
        Eigen::Index best = 0;
        s.head(s.size() - 1).maxCoeff(&best);
        hit += best == insts[k].category_id;
        ++total;
      }
    }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
  }

  NetworkScore score(const World<Box>& w, const StudentParams& p, const DetectConfig& d, std::size_t threads) const {
    const auto dets = detections(w, p, d, threads);
    const auto& v = w.dataset.vocabulary;
    return {class_agnostic_recall<Box>(dets, truth, v.novel_ids()), class_agnostic_recall<Box>(dets, truth, v.base_ids()),
            novel_accuracy(w, p)};
  }
};

namespace detail {

template <typename Box>
std::vector<RegionSample<Box>> supervised_samples(const std::vector<Proposal<Box>>& props,
                                                  const std::vector<Instance<Box>>& annotated, double fg_iou) {
  std::vector<RegionSample<Box>> out;
  for (const auto& p : props) {
    RegionSample<Box> s{p.box, p.feature, kBackgroundLabel, std::nullopt, 1.0};
    const auto [k, q] = best_object(annotated, p.box);
    if (k >= 0 && q >= fg_iou) {
      s.label = annotated[static_cast<std::size_t>(k)].category_id;
      s.target = annotated[static_cast<std::size_t>(k)].box;
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Box>
void append_samples(std::vector<RegionSample<Box>>& dst, std::vector<RegionSample<Box>>& src) {
  for (auto& s : src) dst.push_back(std::move(s));
}

}  // namespace detail

/// Self-training with three flows per iteration: labeled images (Ls),
/// unlabeled images labeled by the EMA teacher (Lu) and, once the burn-in
/// is over, images drawn from the pseudo-label queue (Ld). The external
/// classifier fills the queue from the teacher's selected boxes. The final
/// report scores the EMA teacher on the test split.
/// `resume` continues an earlier run from its checkpointed iteration;
/// `stop_after` ends the loop early at that iteration count.
template <typename Box>
TrainingResult<Box> run_training(const World<Box>& w, const ExperimentConfig& cfg,
                                 const TrainingResult<Box>* resume = nullptr, int stop_after = -1) {
  cfg.validate();
  const TrainConfig& t = cfg.train;
  const auto& vocab = w.dataset.vocabulary;
  const Eigen::Index K = static_cast<Eigen::Index>(vocab.size());
  const std::size_t threads = t.threads;

  TrainingResult<Box> res{{}, {}, DynamicLabelQueue<Box>(QueueOptions{t.p0, t.queue_max_size, {}})};
  auto& student = res.model.student;
  auto& teacher = res.model.teacher;
  student = initial_student(w, t);
  teacher = student;
  int start = 0;
  if (resume) {
    if (!same_shape(resume->model.student, student) || !same_shape(resume->model.teacher, student))
      throw ConfigError("resume: checkpoint does not match the configured model");
    if (resume->model.iteration < 0 || resume->model.iteration > t.iterations)
      throw ConfigError("resume: checkpoint iteration outside the configured run");
    res.model = resume->model;
    res.queue = resume->queue;
    res.log = resume->log;
    start = static_cast<int>(resume->model.iteration);
  }
  const int end = stop_after >= 0 ? std::min(stop_after, t.iterations) : t.iterations;
  auto& queue = res.queue;

  const auto subset = labeled_subset(w.dataset.labeled.size(), t.label_fraction, t.seed);
  const TestBench<Box> bench(w, t.seed, threads);
  const PseudoLabelConfig pcfg{t.rpn_thresh, t.pseudo_nms, t.fg_iou};
  const bool run_unlabeled = (t.beta > 0.0 || t.external_teacher) && t.unlabeled_batch > 0 && !w.dataset.unlabeled.empty();
  const std::vector<int> novel = vocab.novel_ids();

  auto record_eval = [&](int iteration) {
    EvalLog e;
    e.iteration = iteration;
    const auto s = bench.score(w, student, t.detect, threads);
    const auto h = bench.score(w, teacher, t.detect, threads);
    e.student_novel_recall = s.novel_recall;
    e.student_base_recall = s.base_recall;
    e.student_novel_accuracy = s.novel_accuracy;
    e.teacher_novel_recall = h.novel_recall;
    e.teacher_novel_accuracy = h.novel_accuracy;
    e.queue_novel = queue_quality(queue, w.dataset.hidden, novel);
    e.queue_counts = queue.label_counts();
    res.log.evals.push_back(std::move(e));
  };

  for (int it = start; it < end; ++it) {
    const auto ti = static_cast<std::uint64_t>(it);
    IterationLog L;
    L.iteration = it + 1;
    LossTerms terms;

    // Labeled flow.
    {
      Rng pick(derive_seed(t.seed, {kLabeledPick, ti}));
      std::vector<std::size_t> imgs(static_cast<std::size_t>(t.labeled_batch));
      for (auto& i : imgs) i = subset[pick.below(subset.size())];
      std::vector<std::vector<RegionSample<Box>>> per(imgs.size());
      parallel_for(imgs.size(), threads, [&](std::size_t slot) {
        Rng rng(derive_seed(t.seed, {kLabeledImage, ti, slot}));
        const auto& rec = w.dataset.labeled[imgs[slot]];
        auto props = make_proposals(w, w.objects(rec.image_id), rng);
        for (auto& p : props) p.feature = augment_weak(p.feature, t.augmentation, rng);
        per[slot] = detail::supervised_samples(props, rec.instances, t.fg_iou);
      });
      std::vector<RegionSample<Box>> all;
      for (auto& v : per) detail::append_samples(all, v);
      auto ls = supervised_terms<Box>(all, K);
      L.ls = loss_value(student, ls);
      ls.scale(t.alpha);
      terms.append(std::move(ls));
    }

    // Unlabeled flow and queue filling.
    if (run_unlabeled) {
      Rng pick(derive_seed(t.seed, {kUnlabeledPick, ti}));
      std::vector<std::size_t> imgs(static_cast<std::size_t>(t.unlabeled_batch));
      for (auto& i : imgs) i = pick.below(w.dataset.unlabeled.size());
      std::vector<std::vector<RegionSample<Box>>> per(imgs.size());
      std::vector<QueueEntry<Box>> entries(imgs.size());
      std::vector<std::size_t> npseudo(imgs.size(), 0);
      parallel_for(imgs.size(), threads, [&](std::size_t slot) {
        Rng rng(derive_seed(t.seed, {kUnlabeledImage, ti, slot}));
        const auto& rec = w.dataset.unlabeled[imgs[slot]];
        const auto& objs = w.objects(rec.image_id);
        const auto props = make_proposals(w, objs, rng);
        const NetworkOracle<Box> oracle(w, objs, teacher);
        RegressionFilter<Box> filter = [&](std::span<const LabeledBox<Box>> pseudo) {
          std::vector<Candidate<Box>> cand;
          for (const auto& p : pseudo) cand.push_back({p.box, p.score});
          auto sc = cfg.regression_selection;
          sc.seed = derive_seed(t.seed, {kRegressionSelect, ti, slot});
          sc.threads = 1;
          return select<Box>(cand, sc, oracle).keep;
        };
        auto r = consistency_samples<Box>(teacher, props, t.augmentation, pcfg, rng, filter);
        npseudo[slot] = r.pseudo.size();
        per[slot] = std::move(r.samples);
        if (!t.external_teacher || r.pseudo.empty()) return;
        std::vector<Candidate<Box>> cand;
        for (const auto& p : r.pseudo) cand.push_back({p.box, p.score});
        auto qc = cfg.queue_selection;
        qc.seed = derive_seed(t.seed, {kQueueSelect, ti, slot});
        qc.threads = 1;
        const auto kept = select<Box>(cand, qc, oracle).kept;
        Rng ext(derive_seed(t.seed, {kExternal, ti, slot}));
        std::vector<Box> boxes;
        std::vector<Eigen::VectorXd> probs;
        for (auto k : kept) {
          boxes.push_back(r.pseudo[k].box);
          probs.push_back(external_probs(w, objs, r.pseudo[k].box, ext));
        }
        QueueEntry<Box> e{rec.image_id, rec.path, {}, static_cast<std::int64_t>(it + 1)};
        for (const auto& l : filter_pseudo_labels<Box>(boxes, probs, t.p0)) e.labels.push_back({l.box, l.category, l.score});
        entries[slot] = std::move(e);
      });
      std::vector<RegionSample<Box>> all;
      for (std::size_t s = 0; s < per.size(); ++s) {
        detail::append_samples(all, per[s]);
        L.pseudo_boxes += npseudo[s];
      }
      if (t.beta > 0.0) {
        auto lu = weighted_cls_terms<Box>(all, K);
        lu.append(regression_terms<Box>(all));
        L.lu = loss_value(student, lu);
        lu.scale(t.beta);
        terms.append(std::move(lu));
      }
      if (t.external_teacher)
        for (auto& e : entries) L.pushed += queue.push_or_update(std::move(e));
    }

    // Queue flow.
    if (t.external_teacher && t.gamma > 0.0 && t.queue_batch > 0 && it >= t.burn_in() && !queue.empty()) {
      Rng pick(derive_seed(t.seed, {kQueuePick, ti}));
      const auto batch = queue.sample_batch(t.queue_batch, pick);
      std::vector<std::vector<RegionSample<Box>>> per(batch.size());
      parallel_for(batch.size(), threads, [&](std::size_t slot) {
        Rng rng(derive_seed(t.seed, {kQueueImage, ti, slot}));
        const auto& e = batch[slot];
        const auto props = make_proposals(w, w.objects(e.image_id), rng);
        std::vector<Proposal<Box>> weak, strong;
        for (const auto& p : props) {
          weak.push_back({p.box, augment_weak(p.feature, t.augmentation, rng), p.rpn_score});
          strong.push_back({p.box, augment_strong(p.feature, t.augmentation, rng), p.rpn_score});
        }
        const auto pred = predict<Box>(teacher, weak);
        std::vector<LabeledBox<Box>> labels;
        for (const auto& l : e.labels) labels.push_back({l.box, l.category, l.confidence});
        per[slot] = assign_to_pseudo_labels<Box>(strong, labels, pred.probs, {}, t.fg_iou);
      });
      std::vector<RegionSample<Box>> all;
      for (auto& v : per) detail::append_samples(all, v);
      auto ld = queue_terms<Box>(all, K, t.queue_regression);
      L.ld = loss_value(student, ld);
      ld.scale(t.gamma);
      terms.append(std::move(ld));
    }

    L.total = total_loss(L.ls, L.lu, L.ld, t.alpha, t.beta, t.gamma);
    Eigen::VectorXd grad;
    loss_and_grad(student, terms, &grad);
    sgd_step(student, grad, res.model.optimizer, t.sgd);
    ema_update(teacher, student, t.ema_momentum);
    if (!all_finite(student)) throw InvariantError("training diverged at iteration " + std::to_string(it + 1));
    L.queue_size = queue.size();
    L.queue_labels = queue.num_labels();
    res.log.iterations.push_back(L);
    if ((it + 1) % t.eval_interval == 0 || it + 1 == t.iterations) record_eval(it + 1);
  }
  res.model.iteration = std::max(start, end);

  const auto dets = bench.detections(w, teacher, t.detect, threads);
  res.log.final_report = evaluate<Box>(dets, bench.truth, vocab);
  res.log.final_novel_accuracy = bench.novel_accuracy(w, teacher);
  return res;
}

/// `points`-wide trailing moving average.
inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t points) {
  std::vector<double> out;
  for (std::size_t i = 0; i + points <= xs.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < points; ++j) s += xs[i + j];
    out.push_back(s / static_cast<double>(points));
  }
  return out;
}

inline void write_losses_csv(std::ostream& out, const ExperimentLog& log) {
  out << "iteration,ls,lu,ld,total,pseudo_boxes,pushed,queue_size,queue_labels\n";
  for (const auto& r : log.iterations)
    out << r.iteration << ',' << format_double(r.ls) << ',' << format_double(r.lu) << ',' << format_double(r.ld) << ','
        << format_double(r.total) << ',' << r.pseudo_boxes << ',' << r.pushed << ',' << r.queue_size << ','
        << r.queue_labels << '\n';
}

inline void write_eval_csv(std::ostream& out, const ExperimentLog& log) {
  out << "iteration,student_novel_recall,student_base_recall,student_novel_accuracy,teacher_novel_recall,"
         "teacher_novel_accuracy,queue_novel_precision,queue_novel_recall,queue_novel_ap,queue_novel_labels\n";
  for (const auto& e : log.evals)
    out << e.iteration << ',' << format_double(e.student_novel_recall) << ',' << format_double(e.student_base_recall)
        << ',' << format_double(e.student_novel_accuracy) << ',' << format_double(e.teacher_novel_recall) << ','
        << format_double(e.teacher_novel_accuracy) << ',' << format_double(e.queue_novel.precision) << ','
        << format_double(e.queue_novel.recall) << ',' << format_double(e.queue_novel.ap) << ','
        << e.queue_novel.num_labels << '\n';
}

inline void write_queue_counts_csv(std::ostream& out, const ExperimentLog& log, const Vocabulary& vocab) {
  out << "iteration,category,labels\n";
  for (const auto& e : log.evals)
    for (const auto& [c, n] : e.queue_counts) out << e.iteration << ',' << vocab.name(c) << ',' << n << '\n';
}

inline nlohmann::json summary_json(const ExperimentLog& log, const Vocabulary& vocab, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["config"] = config_to_json(cfg);
  j["report"] = report_to_json(log.final_report, vocab);
  j["novel_accuracy"] = log.final_novel_accuracy;
  if (!log.evals.empty()) {
    const auto& e = log.evals.back();
    j["final"] = {{"student_novel_recall", e.student_novel_recall},
                  {"teacher_novel_recall", e.teacher_novel_recall},
                  {"queue_novel_precision", e.queue_novel.precision},
                  {"queue_novel_recall", e.queue_novel.recall}};
  }
  return j;
}

namespace detail {

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& w) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write " + tmp);
    w(out);
    if (!out) throw ConfigError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Writes the metric CSVs, summary.json, PR curves and the model and queue
/// checkpoints under `dir`.
template <typename Box>
void write_experiment(const std::filesystem::path& dir, const TrainingResult<Box>& r, const Vocabulary& vocab,
                      const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "losses.csv", [&](std::ostream& o) { write_losses_csv(o, r.log); });
  detail::write_file(dir / "eval.csv", [&](std::ostream& o) { write_eval_csv(o, r.log); });
  detail::write_file(dir / "queue_counts.csv", [&](std::ostream& o) { write_queue_counts_csv(o, r.log, vocab); });
  detail::write_file(dir / "report.csv", [&](std::ostream& o) { write_report_csv(o, r.log.final_report, vocab); });
  detail::write_file(dir / "summary.json",
                     [&](std::ostream& o) { o << summary_json(r.log, vocab, cfg).dump(2) << '\n'; });
  detail::write_file(dir / "queue.jsonl", [&](std::ostream& o) { write_queue_checkpoint(o, r.queue); });
  detail::write_file(dir / "queue_labels.csv", [&](std::ostream& o) { write_queue_detections(o, r.queue, vocab); });
  save_model_checkpoint(dir / "model.ckpt", r.model);
  write_pr_curves(dir / "pr", r.log.final_report, vocab);
}

}  // namespace ovst
