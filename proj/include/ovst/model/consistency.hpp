// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ovst/classifier/head.hpp"
#include "ovst/core/error.hpp"
#include "ovst/core/rng.hpp"
#include "ovst/geometry/detection.hpp"
#include "ovst/geometry/iou.hpp"
#include "ovst/geometry/nms.hpp"
#include "ovst/model/losses.hpp"
#include "ovst/model/student.hpp"

namespace ovst {

/// Weak (teacher side) and strong (student side) perturbations of region
/// features.
struct Augmentation {
  double weak_noise = 0.05;
  double weak_box_jitter = 0.0;  // fraction of box size
  double strong_noise = 0.3;
  double strong_mask = 0.1;  // probability of zeroing a feature entry

  void validate() const {
    if (!(weak_noise >= 0.0) || !(strong_noise >= weak_noise))
      throw ConfigError("augmentation: need strong_noise >= weak_noise >= 0");
    if (!(weak_box_jitter >= 0.0)) throw ConfigError("augmentation: box jitter must be >= 0");
    if (!(strong_mask >= 0.0 && strong_mask < 1.0)) throw ConfigError("augmentation: mask rate must lie in [0, 1)");
  }
};

inline Eigen::VectorXd augment_weak(const Eigen::VectorXd& x, const Augmentation& a, Rng& rng) {
  Eigen::VectorXd out = x;
  if (a.weak_noise > 0.0)
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += a.weak_noise * rng.normal();
  return out;
}

inline Eigen::VectorXd augment_strong(const Eigen::VectorXd& x, const Augmentation& a, Rng& rng) {
  Eigen::VectorXd out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (a.strong_noise > 0.0) out[i] += a.strong_noise * rng.normal();
    if (a.strong_mask > 0.0 && rng.uniform() < a.strong_mask) out[i] = 0.0;
  }
  return out;
}

template <typename Box>
Box jitter_box(const Box& b, double frac, Rng& rng) {
  if (frac <= 0.0) return b;
  if constexpr (std::is_same_v<Box, HBox>) {
    const double w = b.width(), h = b.height();
    return {b.x1 + frac * w * rng.normal(), b.y1 + frac * h * rng.normal(), b.x2 + frac * w * rng.normal(),
            b.y2 + frac * h * rng.normal()};
  } else {
    return {b.cx + frac * b.w * rng.normal(), b.cy + frac * b.h * rng.normal(), b.w, b.h, b.a};
  }
}

/// A candidate region as produced by the proposal stage.
template <typename Box>
struct Proposal {
  Box box{};
  Eigen::VectorXd feature;
  double rpn_score = 0.0;
};

template <typename Box>
struct TeacherPrediction {
  std::vector<Box> refined;
  std::vector<Eigen::VectorXd> probs;
};

template <typename Box>
TeacherPrediction<Box> predict(const StudentParams& p, std::span<const Proposal<Box>> props) {
  TeacherPrediction<Box> out;
  for (const auto& pr : props) {
    auto f = forward(p, pr.feature, pr.box);
    out.refined.push_back(f.box);
    out.probs.push_back(predict_probs(f.scores));
  }
  return out;
}

struct PseudoLabelConfig {
  double rpn_thresh = 0.95;
  double nms_thresh = 0.5;
  double fg_iou = 0.5;
};

/// Refined boxes of proposals whose objectness reaches `rpn_thresh`, after
/// class-agnostic NMS by objectness. Each carries the teacher's top
/// foreground category; its score is the objectness.
template <typename Box>
std::vector<LabeledBox<Box>> teacher_pseudo_labels(const TeacherPrediction<Box>& pred,
                                                   std::span<const Proposal<Box>> props,
                                                   const PseudoLabelConfig& cfg) {
  std::vector<ScoredBox<Box>> cand;
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (props[i].rpn_score < cfg.rpn_thresh || !pred.refined[i].valid()) continue;
    const auto& pr = pred.probs[i];
    Eigen::Index best = 0;
    pr.head(pr.size() - 1).maxCoeff(&best);
    cand.push_back({pred.refined[i], props[i].rpn_score, static_cast<int>(best)});
  }
  std::vector<LabeledBox<Box>> out;
  for (auto i : nms<Box>(cand, cfg.nms_thresh, false)) out.push_back({cand[i].box, cand[i].category, cand[i].score});
  return out;
}

/// Proposals overlapping a pseudo box by at least `fg_iou` take its label
/// (and, when `regress[j]`, its box as regression target); all others are
/// background weighted by the teacher's background probability.
template <typename Box>
std::vector<RegionSample<Box>> assign_to_pseudo_labels(std::span<const Proposal<Box>> props,
                                                       std::span<const LabeledBox<Box>> pseudo,
                                                       std::span<const Eigen::VectorXd> teacher_probs,
                                                       const std::vector<bool>& regress, double fg_iou) {
  if (teacher_probs.size() != props.size()) throw InvariantError("assign: teacher output size mismatch");
  if (!regress.empty() && regress.size() != pseudo.size()) throw InvariantError("assign: regression mask size mismatch");
  std::vector<RegionSample<Box>> out;
  for (std::size_t i = 0; i < props.size(); ++i) {
    RegionSample<Box> s;
    s.box = props[i].box;
    s.feature = props[i].feature;
    double best = -1.0;
    std::size_t bj = 0;
    for (std::size_t j = 0; j < pseudo.size(); ++j) {
      const double v = iou(props[i].box, pseudo[j].box);
      if (v > best) best = v, bj = j;
    }
    if (best >= fg_iou) {
      s.label = pseudo[bj].category;
      if (regress.empty() || regress[bj]) s.target = pseudo[bj].box;
    } else {
      const auto& pr = teacher_probs[i];
      s.bg_score = pr[pr.size() - 1];
    }
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Box>
using RegressionFilter = std::function<std::vector<bool>(std::span<const LabeledBox<Box>>)>;

template <typename Box>
struct ConsistencyResult {
  std::vector<LabeledBox<Box>> pseudo;
  std::vector<RegionSample<Box>> samples;
  TeacherPrediction<Box> teacher;
};

/// The teacher labels weakly augmented proposals; the same proposals under
/// strong augmentation become the student's samples. `filter` picks the
/// pseudo boxes used as regression targets (all when empty).
template <typename Box>
ConsistencyResult<Box> consistency_samples(const TeacherParams& teacher, std::span<const Proposal<Box>> clean,
                                           const Augmentation& aug, const PseudoLabelConfig& cfg, Rng& rng,
                                           const RegressionFilter<Box>& filter = {}) {
  aug.validate();
  std::vector<Proposal<Box>> weak, strong;
  for (const auto& p : clean) {
    weak.push_back({jitter_box(p.box, aug.weak_box_jitter, rng), augment_weak(p.feature, aug, rng), p.rpn_score});
    strong.push_back({p.box, augment_strong(p.feature, aug, rng), p.rpn_score});
  }
  ConsistencyResult<Box> r;
  r.teacher = predict<Box>(teacher, weak);
  r.pseudo = teacher_pseudo_labels<Box>(r.teacher, weak, cfg);
  const std::vector<bool> regress = filter ? filter(r.pseudo) : std::vector<bool>{};
  r.samples = assign_to_pseudo_labels<Box>(strong, r.pseudo, r.teacher.probs, regress, cfg.fg_iou);
  return r;
}

/// Unsupervised loss of the student on one unlabeled image's proposals.
template <typename Box>
double consistency_step(const StudentParams& student, const TeacherParams& teacher, std::span<const Proposal<Box>> clean,
                        const Augmentation& aug, const PseudoLabelConfig& cfg, Rng& rng,
                        const RegressionFilter<Box>& filter = {}) {
  const auto r = consistency_samples<Box>(teacher, clean, aug, cfg, rng, filter);
  auto terms = weighted_cls_terms<Box>(r.samples, student.num_categories());
  terms.append(regression_terms<Box>(r.samples));
  return loss_value(student, terms);
}

struct DetectConfig {
  double fg_thresh = 0.5;
  double nms_thresh = 0.5;
};

/// Refined proposals whose foreground probability (1 - p_bg) reaches
/// `fg_thresh`, labeled by the top foreground category and scored by its
/// probability, then class-aware NMS.
template <typename Box>
std::vector<Detection<Box>> detect(const StudentParams& p, std::int64_t image_id, std::span<const Proposal<Box>> props,
                                   const DetectConfig& cfg) {
  std::vector<ScoredBox<Box>> cand;
  for (const auto& pr : props) {
    const auto f = forward(p, pr.feature, pr.box);
    if (!f.box.valid()) continue;
    const Eigen::VectorXd pb = predict_probs(f.scores);
    const Eigen::Index k = pb.size() - 1;
    if (1.0 - pb[k] < cfg.fg_thresh) continue;
    Eigen::Index best = 0;
    pb.head(k).maxCoeff(&best);
    cand.push_back({f.box, pb[best], static_cast<int>(best)});
  }
  std::vector<Detection<Box>> out;
  for (auto i : nms<Box>(cand, cfg.nms_thresh, true)) out.push_back({image_id, cand[i].box, cand[i].category, cand[i].score});
  return out;
}

}  // namespace ovst
