// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Optional argument: path to the reference config.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/model_fixtures.hpp"
#include "../unit/oracles.hpp"
#include "ovst/eval/evaluation.hpp"
#include "ovst/geometry/iou.hpp"
#include "ovst/geometry/patches.hpp"
#include "ovst/queue/label_queue.hpp"
#include "ovst/selection/synthetic_oracle.hpp"
#include "ovst/sim/ablation.hpp"

#ifndef OVST_CONFIG_DIR
#define OVST_CONFIG_DIR "configs"
#endif

namespace ovst {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1
Outcome harmonic_mean_values() {
  const double a = harmonic_mean(62.2, 69.1), b = harmonic_mean(39.0, 46.3);
  return {std::abs(a - 65.5) <= 0.05 && std::abs(b - 42.3) <= 0.05,
          "HM(62.2,69.1)=" + fmt("%.4f", a) + " HM(39.0,46.3)=" + fmt("%.4f", b)};
}

// 2
Outcome rotated_iou_vs_monte_carlo() {
  Rng rng(20260);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto draw = [&] {
      return OBox{rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(2, 30), rng.uniform(2, 30), rng.uniform(-4, 4)};
    };
    const OBox a = draw(), b = draw();
    worst = std::max(worst, std::abs(iou_r(a, b) - testing::monte_carlo_iou(a, b, 1'000'000, 900 + i)));
  }
  return {worst < 1e-2, "max |iou_r - MC| over 100 pairs = " + fmt("%.2e", worst)};
}

// 3
Outcome gradient_check() {
  Rng rng(2024);
  double worst = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    const auto p = testing::random_student(static_cast<BackgroundMode>(draw % 3), rng);
    worst = std::max(worst, testing::max_block_relative_error(p, testing::all_four_terms(p, rng)));
  }
  return {worst < 1e-4, "max relative error over 20 draws = " + fmt("%.2e", worst)};
}

// 4
Outcome ema_law() {
  Rng rng(10);
  double worst = 0.0;
  for (double alpha : {0.0, 0.9, 0.999}) {
    auto teacher = testing::random_student(BackgroundMode::kLearnable, rng);
    auto student = testing::random_student(BackgroundMode::kLearnable, rng);
    const Eigen::VectorXd gap0 = (pack(teacher) - pack(student)).cwiseAbs();
    for (int t = 1; t <= 1000; ++t) {
      ema_update(teacher, student, alpha);
      const Eigen::VectorXd gap = (pack(teacher) - pack(student)).cwiseAbs();
      worst = std::max(worst, (gap - std::pow(alpha, t) * gap0).cwiseAbs().maxCoeff());
    }
  }
  return {worst < 1e-10, "max deviation from alpha^t law = " + fmt("%.2e", worst)};
}

// 5
template <typename Box, typename Perturb, typename Score>
double fidelity(const std::vector<Box>& truths, Perturb perturb, Score score, std::size_t n, Rng& rng) {
  const IouNoiseOracle<Box> oracle(truths);
  std::vector<double> ious, neg_scores;
  for (std::size_t i = 0; i < n; ++i) {
    const Box& t = truths[i % truths.size()];
    const Box c = perturb(t, rng.uniform(0.0, 0.45), rng);
    double q = 0.0;
    for (const auto& g : truths) q = std::max(q, iou(c, g));
    Rng stream(derive_seed(77, {static_cast<std::uint64_t>(i)}));
    ious.push_back(q);
    neg_scores.push_back(-score(c, oracle, stream));
  }
  return testing::spearman(ious, neg_scores);
}

Outcome selection_fidelity() {
  Rng rng(5);
  std::vector<HBox> ht;
  std::vector<OBox> ot;
  for (int i = 0; i < 8; ++i) {
    const double x = 150.0 * i, y = 80.0 * (i % 3);
    ht.push_back({x, y, x + rng.uniform(30, 70), y + rng.uniform(30, 70)});
    ot.push_back({x, y, rng.uniform(30, 70), rng.uniform(15, 40), rng.uniform(-1.2, 1.2)});
  }
  auto hperturb = [](const HBox& t, double s, Rng& r) {
    const double w = t.width(), h = t.height();
    HBox c{t.x1 + s * w * r.uniform(-1, 1), t.y1 + s * h * r.uniform(-1, 1), t.x2 + s * w * r.uniform(-1, 1),
           t.y2 + s * h * r.uniform(-1, 1)};
    if (c.x2 - c.x1 < 2) c.x2 = c.x1 + 2;
    if (c.y2 - c.y1 < 2) c.y2 = c.y1 + 2;
    return c;
  };
  auto operturb = [](const OBox& t, double s, Rng& r) {
    return OBox{t.cx + s * t.w * r.uniform(-1, 1), t.cy + s * t.h * r.uniform(-1, 1),
                t.w * (1 + s * r.uniform(-0.8, 0.8)), t.h * (1 + s * r.uniform(-0.8, 0.8)), t.a + s * r.uniform(-1.5, 1.5)};
  };
  const SelectionConfig c;
  const std::size_t n = 240;
  const double rho_bjv = fidelity<HBox>(ht, hperturb, [&](const HBox& b, const auto& o, Rng& r) {
    return bjv(b, o, c.jitter_count, c.jitter, r);
  }, n, rng);
  const double rho_rjv = fidelity<HBox>(ht, hperturb, [&](const HBox& b, const auto& o, Rng& r) {
    return rjv(b, o, c.jitter_count, r);
  }, n, rng);
  const double rho_sjv = fidelity<OBox>(ot, operturb, [&](const OBox& b, const auto& o, Rng& r) {
    return sjv(b, o, c.jitter_count, c.jitter, c.angle_jitter, r);
  }, n, rng);
  const double rho_ajv = fidelity<OBox>(ot, operturb, [&](const OBox& b, const auto& o, Rng& r) {
    return ajv(b, o, c.jitter_count, c.jitter, c.angle_jitter, c.angle_transform, r);
  }, n, rng);
  const double lo = std::min({rho_bjv, rho_rjv, rho_sjv, rho_ajv});
  return {lo >= 0.5, "Spearman(IoU, -score) over " + std::to_string(n) + " candidates: BJV " + fmt("%.3f", rho_bjv) +
                         " RJV " + fmt("%.3f", rho_rjv) + " SJV " + fmt("%.3f", rho_sjv) + " AJV " +
                         fmt("%.3f", rho_ajv)};
}

// 6, 7, 8 and 10 share the reference runs.
struct ReferenceRuns {
  ExperimentConfig base;
  std::vector<ExperimentLog> flows;  // S, S+LT, S+LT+ET
  ExperimentLog full_threaded;
  int threads = 4;
};

ReferenceRuns run_reference(const std::string& path) {
  ReferenceRuns r;
  r.base = load_config(path);
  for (const auto& cell : builtin_grid("flows", r.base.box)) r.flows.push_back(run_experiment(apply_patch(r.base, cell.patch)));
  auto threaded = r.base;
  threaded.train.threads = r.threads;
  r.full_threaded = run_experiment(threaded);
  return r;
}

Outcome flywheel(const ReferenceRuns& r) {
  const double s = 100 * r.flows[0].final_report.agnostic_recall_novel;
  const double lt = 100 * r.flows[1].final_report.agnostic_recall_novel;
  const double et = 100 * r.flows[2].final_report.agnostic_recall_novel;
  return {lt - s >= 5.0 && et - lt >= 5.0,
          "novel recall S " + fmt("%.1f", s) + " < S+LT " + fmt("%.1f", lt) + " < S+LT+ET " + fmt("%.1f", et)};
}

Outcome novel_learning(const ReferenceRuns& r) {
  const double chance = 1.0 / static_cast<double>(r.base.world.num_base + r.base.world.num_novel);
  const double full = r.flows[2].final_novel_accuracy, sup = r.flows[0].final_novel_accuracy;
  const bool separated = r.base.world.class_separation >= 6.0;
  return {separated && full >= 0.9 && sup <= chance + 0.1,
          "separation " + fmt("%.1f", r.base.world.class_separation) + " sigma; novel accuracy full " +
              fmt("%.3f", full) + ", supervised-only " + fmt("%.3f", sup) + " (chance " + fmt("%.3f", chance) + ")"};
}

Outcome queue_trend(const ReferenceRuns& r) {
  const auto& log = r.flows[2];
  const int burn_in = r.base.train.burn_in();
  std::vector<double> prec;
  for (const auto& e : log.evals)
    if (e.iteration > burn_in) prec.push_back(e.queue_novel.precision);
  const auto ma = moving_average(prec, 5);
  bool ok = ma.size() >= 2;
  double worst_drop = 0.0;
  for (std::size_t i = 1; i < ma.size(); ++i) worst_drop = std::max(worst_drop, ma[i - 1] - ma[i]);
  ok = ok && worst_drop <= 0.0;
  return {ok, std::to_string(ma.size()) + " moving-average points after burn-in, first " +
                  fmt("%.3f", ma.empty() ? 0.0 : ma.front()) + " last " + fmt("%.3f", ma.empty() ? 0.0 : ma.back()) +
                  ", largest drop " + fmt("%.2e", worst_drop)};
}

std::string csv_bytes(const ExperimentLog& log, std::size_t num_categories) {
  std::ostringstream o;
  write_losses_csv(o, log);
  write_eval_csv(o, log);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < num_categories; ++i) names.push_back("c" + std::to_string(i));
  std::vector<bool> novel(num_categories, false);
  write_queue_counts_csv(o, log, Vocabulary(names, novel));
  return o.str();
}

Outcome determinism(const ReferenceRuns& r) {
  const std::size_t k = static_cast<std::size_t>(r.base.world.num_base + r.base.world.num_novel);
  const auto again = run_experiment(r.base);
  const auto a = csv_bytes(r.flows[2], k), b = csv_bytes(again, k), c = csv_bytes(r.full_threaded, k);
  return {a == b && a == c, "repeat run " + std::string(a == b ? "identical" : "DIFFERENT") + ", " +
                                std::to_string(r.threads) + " threads " + (a == c ? "identical" : "DIFFERENT") + " (" +
                                std::to_string(a.size()) + " bytes)"};
}

// 9
Outcome patch_round_trip() {
  Rng rng(99);
  std::size_t scenes_ok = 0, total_dets = 0;
  double worst = 0.0;
  for (int scene = 0; scene < 50; ++scene) {
    const int W = 1024 + static_cast<int>(rng.below(3000)), H = 1024 + static_cast<int>(rng.below(3000));
    // Non-overlapping objects small enough that each fits inside some patch.
    std::vector<Detection<OBox>> truth;
    for (int tries = 0; tries < 400 && truth.size() < 40; ++tries) {
      const double w = rng.uniform(10, 120), h = rng.uniform(10, 120);
      const OBox b{rng.uniform(80, W - 80), rng.uniform(80, H - 80), w, h, rng.uniform(-1.5, 1.5)};
      const HBox e = enclosing_hbox(b);
      if (e.x1 < 0 || e.y1 < 0 || e.x2 > W || e.y2 > H || e.width() > 190 || e.height() > 190) continue;
      bool clear = true;
      for (const auto& t : truth) clear = clear && iou(enclosing_hbox(t.box), e) == 0.0;
      if (!clear) continue;
      truth.push_back({scene, b, static_cast<int>(rng.below(5)), rng.uniform(0.05, 1.0)});
    }
    // Whole-image detector: reports each object; merged NMS on the full image.
    std::vector<ScoredBox<OBox>> full_sb;
    for (const auto& t : truth) full_sb.push_back({t.box, t.score, t.category});
    std::vector<Detection<OBox>> full;
    for (auto i : nms<OBox>(full_sb, 0.5, true)) full.push_back({scene, full_sb[i].box, full_sb[i].category, full_sb[i].score});
    // Patch detector: reports objects fully inside the patch, in local coordinates.
    const auto grid = split_patches(W, H);
    std::vector<PatchDetection<OBox>> per_patch;
    for (std::size_t p = 0; p < grid.origins.size(); ++p) {
      const auto& o = grid.origins[p];
      for (const auto& t : truth) {
        const HBox e = enclosing_hbox(t.box);
        if (e.x1 >= o.x && e.y1 >= o.y && e.x2 <= o.x + grid.patch_width(o) && e.y2 <= o.y + grid.patch_height(o))
          per_patch.push_back({p, {scene, translate(t.box, -o.x, -o.y), t.category, t.score}});
      }
    }
    auto merged = remap_and_merge<OBox>(per_patch, grid, 0.5);
    auto key = [](const Detection<OBox>& d) { return std::tuple{d.category, d.score, d.box.cx, d.box.cy}; };
    auto by_key = [&](const auto& a, const auto& b) { return key(a) < key(b); };
    std::sort(full.begin(), full.end(), by_key);
    std::sort(merged.begin(), merged.end(), by_key);
    bool same = full.size() == merged.size();
    for (std::size_t i = 0; same && i < full.size(); ++i) {
      const auto a = BoxTraits<OBox>::to_array(full[i].box), b = BoxTraits<OBox>::to_array(merged[i].box);
      for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
      same = full[i].category == merged[i].category && full[i].score == merged[i].score;
    }
    scenes_ok += same && worst <= 1e-9;
    total_dets += full.size();
  }
  return {scenes_ok == 50, std::to_string(scenes_ok) + "/50 scenes match (" + std::to_string(total_dets) +
                               " detections), max coordinate error " + fmt("%.1e", worst)};
}

// 11
Outcome queue_index() {
  DynamicLabelQueue<HBox> q;
  Rng rng(31337);
  for (int op = 0; op < 10'000; ++op) {
    QueueEntry<HBox> e{static_cast<std::int64_t>(rng.below(400)), "img", {}, op};
    const auto n = rng.below(5);
    for (std::uint64_t i = 0; i < n; ++i) {
      const double x = 10.0 * static_cast<double>(i);
      e.labels.push_back({{x, 0, x + 5, 5}, static_cast<int>(rng.below(12)), rng.uniform(0.8, 1.0)});
    }
    q.push_or_update(std::move(e));
  }
  std::map<int, std::set<std::int64_t>> sets;
  for (const auto& [id, e] : q.entries())
    for (const auto& l : e.labels) sets[l.category].insert(id);
  std::map<int, std::vector<std::int64_t>> brute;
  for (const auto& [c, s] : sets) brute[c] = {s.begin(), s.end()};
  return {q.index() == brute, std::to_string(q.size()) + " entries, " + std::to_string(brute.size()) +
                                  " categories; index " + (q.index() == brute ? "equals" : "DIFFERS FROM") +
                                  " brute-force rebuild"};
}

}  // namespace
}  // namespace ovst

int main(int argc, char** argv) {
  using namespace ovst;
  const std::string config = argc > 1 ? argv[1] : std::string(OVST_CONFIG_DIR) + "/reference.json";
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("[%s] %2d %-26s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, "harmonic_mean", harmonic_mean_values);
  report(2, "rotated_iou_monte_carlo", rotated_iou_vs_monte_carlo);
  report(3, "gradient_finite_diff", gradient_check);
  report(4, "ema_law", ema_law);
  report(5, "selection_score_fidelity", selection_fidelity);
  std::optional<ReferenceRuns> runs;
  auto with_runs = [&](Outcome (*f)(const ReferenceRuns&)) {
    return [&, f] {
      if (!runs) runs = run_reference(config);
      return f(*runs);
    };
  };
  report(6, "flywheel_ordering", with_runs(flywheel));
  report(7, "novel_category_learning", with_runs(novel_learning));
  report(8, "queue_quality_trend", with_runs(queue_trend));
  report(9, "patch_round_trip", patch_round_trip);
  report(10, "determinism", with_runs(determinism));
  report(11, "queue_index_consistency", queue_index);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
