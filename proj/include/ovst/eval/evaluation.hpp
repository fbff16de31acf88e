// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "ovst/annotations/dataset.hpp"
#include "ovst/core/error.hpp"
#include "ovst/geometry/detection.hpp"
#include "ovst/geometry/iou.hpp"

namespace ovst {

template <typename Box>
using GroundTruth = std::map<std::int64_t, std::vector<Instance<Box>>>;

enum class MatchStatus { kTruePositive, kFalsePositive, kIgnored };

struct MatchResult {
  std::vector<std::size_t> order;     // detection indices, score descending
  std::vector<MatchStatus> status;    // indexed like `order`
  std::vector<long> matched_gt;       // gt index within its image, -1 if none
  std::size_t num_gt = 0;             // non-difficult ground truth count
};

/// Greedy matching in descending score (ties by input order). Each detection
/// takes the unmatched non-difficult ground truth of highest IoU at or
/// above the threshold; failing that, overlapping a difficult ground truth
/// makes it ignored rather than a false positive. With `class_agnostic`
/// categories are not compared.
template <typename Box>
MatchResult match_detections(std::span<const Detection<Box>> dets, const GroundTruth<Box>& gts, double iou_thresh,
                             bool class_agnostic) {
  MatchResult r;
  for (const auto& [id, insts] : gts)
    for (const auto& g : insts) r.num_gt += g.difficult ? 0 : 1;
  r.order.resize(dets.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
  std::map<std::int64_t, std::vector<bool>> used;
  for (const auto& [id, insts] : gts) used[id].assign(insts.size(), false);
  for (const std::size_t di : r.order) {
    const auto& d = dets[di];
    MatchStatus st = MatchStatus::kFalsePositive;
    long best = -1;
    const auto it = gts.find(d.image_id);
    if (it != gts.end()) {
      double best_iou = iou_thresh;
      bool hits_difficult = false;
      const auto& insts = it->second;
      for (std::size_t g = 0; g < insts.size(); ++g) {
        if (!class_agnostic && insts[g].category_id != d.category) continue;
        const double v = iou(d.box, insts[g].box);
        if (v < iou_thresh) continue;
        if (insts[g].difficult) {
          hits_difficult = true;
          continue;
        }
        if (!used[d.image_id][g] && (best < 0 || v > best_iou)) best = static_cast<long>(g), best_iou = v;
      }
      if (best >= 0) {
        used[d.image_id][static_cast<std::size_t>(best)] = true;
        st = MatchStatus::kTruePositive;
      } else if (hits_difficult) {
        st = MatchStatus::kIgnored;
      }
    }
    r.status.push_back(st);
    r.matched_gt.push_back(best);
  }
  return r;
}

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;
};

/// Precision/recall after each non-ignored detection in score order.
template <typename Box>
std::vector<PrPoint> pr_curve(const MatchResult& m, std::span<const Detection<Box>> dets) {
  std::vector<PrPoint> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < m.order.size(); ++i) {
    if (m.status[i] == MatchStatus::kIgnored) continue;
    (m.status[i] == MatchStatus::kTruePositive ? tp : fp) += 1;
    out.push_back({m.num_gt ? static_cast<double>(tp) / static_cast<double>(m.num_gt) : 0.0,
                   static_cast<double>(tp) / static_cast<double>(tp + fp), dets[m.order[i]].score});
  }
  return out;
}

/// All-points interpolated AP: area under the monotone precision envelope.
/// Undefined (nullopt) without ground truth.
inline std::optional<double> average_precision(std::span<const PrPoint> curve, std::size_t num_gt) {
  if (num_gt == 0) return std::nullopt;
  if (curve.empty()) return 0.0;
  std::vector<double> env(curve.size());
  double run = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) env[i] = run = std::max(run, curve[i].precision);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * env[i];
    prev_recall = curve[i].recall;
  }
  return std::clamp(ap, 0.0, 1.0);
}

template <typename Box>
std::optional<double> average_precision(const MatchResult& m, std::span<const Detection<Box>> dets) {
  const auto curve = pr_curve<Box>(m, dets);
  return average_precision(curve, m.num_gt);
}

inline double recall_of(const MatchResult& m) {
  if (m.num_gt == 0) return 0.0;
  const auto tp = std::count(m.status.begin(), m.status.end(), MatchStatus::kTruePositive);
  return static_cast<double>(tp) / static_cast<double>(m.num_gt);
}

/// 2ab / (a + b), and 0 when both are 0.
inline double harmonic_mean(double base, double novel) {
  if (base < 0.0 || novel < 0.0) throw InvariantError("harmonic_mean: negative input");
  if (base + novel == 0.0) return 0.0;
  return 2.0 * base * novel / (base + novel);
}

struct ClassMetrics {
  int category = 0;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
  std::optional<double> ap;
  double recall = 0.0;
  std::vector<PrPoint> curve;
};

struct EvalReport {
  double iou_thresh = 0.5;
  std::vector<ClassMetrics> classes;  // vocabulary order
  double map = 0.0, map_base = 0.0, map_novel = 0.0;
  double mar = 0.0, mar_base = 0.0, mar_novel = 0.0;
  double hm_ap = 0.0, hm_ar = 0.0;
  double agnostic_recall_base = 0.0, agnostic_recall_novel = 0.0;
};

template <typename Box>
GroundTruth<Box> restrict_categories(const GroundTruth<Box>& gts, const std::vector<int>& cats) {
  GroundTruth<Box> out;
  for (const auto& [id, insts] : gts) {
    auto& dst = out[id];
    for (const auto& g : insts)
      if (std::find(cats.begin(), cats.end(), g.category_id) != cats.end()) dst.push_back(g);
  }
  return out;
}

/// Class-agnostic recall: share of the listed categories' objects covered
/// by any detection regardless of its predicted category.
template <typename Box>
double class_agnostic_recall(std::span<const Detection<Box>> dets, const GroundTruth<Box>& gts,
                             const std::vector<int>& cats, double iou_thresh = 0.5) {
  const auto sub = restrict_categories(gts, cats);
  return recall_of(match_detections<Box>(dets, sub, iou_thresh, true));
}

/// Per-class AP/recall, their base/novel means (classes without ground
/// truth are skipped), harmonic means and class-agnostic recalls.
template <typename Box>
EvalReport evaluate(std::span<const Detection<Box>> dets, const GroundTruth<Box>& gts, const Vocabulary& vocab,
                    double iou_thresh = 0.5) {
  for (const auto& d : dets)
    if (!vocab.contains(d.category)) throw InvariantError("evaluate: unknown category id " + std::to_string(d.category));
  for (const auto& [id, insts] : gts)
    for (const auto& g : insts)
      if (!vocab.contains(g.category_id)) throw InvariantError("evaluate: unknown ground-truth category");

  EvalReport rep;
  rep.iou_thresh = iou_thresh;
  std::vector<double> ap_all, ap_base, ap_novel, ar_all, ar_base, ar_novel;
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    const int cat = static_cast<int>(c);
    std::vector<Detection<Box>> cd;
    for (const auto& d : dets)
      if (d.category == cat) cd.push_back(d);
    const auto sub = restrict_categories(gts, {cat});
    const auto m = match_detections<Box>(cd, sub, iou_thresh, false);
    ClassMetrics cm;
    cm.category = cat;
    cm.num_gt = m.num_gt;
    cm.num_det = cd.size();
    cm.curve = pr_curve<Box>(m, cd);
    cm.ap = average_precision(cm.curve, m.num_gt);
    cm.recall = recall_of(m);
    if (cm.ap) {
      ap_all.push_back(*cm.ap);
      ar_all.push_back(cm.recall);
      (vocab.is_novel(cat) ? ap_novel : ap_base).push_back(*cm.ap);
      (vocab.is_novel(cat) ? ar_novel : ar_base).push_back(cm.recall);
    }
    rep.classes.push_back(std::move(cm));
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  rep.map = mean(ap_all), rep.map_base = mean(ap_base), rep.map_novel = mean(ap_novel);
  rep.mar = mean(ar_all), rep.mar_base = mean(ar_base), rep.mar_novel = mean(ar_novel);
  rep.hm_ap = harmonic_mean(rep.map_base, rep.map_novel);
  rep.hm_ar = harmonic_mean(rep.mar_base, rep.mar_novel);
  rep.agnostic_recall_base = class_agnostic_recall<Box>(dets, gts, vocab.base_ids(), iou_thresh);
  rep.agnostic_recall_novel = class_agnostic_recall<Box>(dets, gts, vocab.novel_ids(), iou_thresh);
  return rep;
}

}  // namespace ovst
