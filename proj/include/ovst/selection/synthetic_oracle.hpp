// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <vector>

#include "ovst/geometry/iou.hpp"
#include "ovst/selection/selection.hpp"

namespace ovst {

/// Refinement noise that grows as a box drifts away from the object it
/// covers. Each refine() pulls the box toward its best-matching truth box
/// by `pull` and adds Gaussian noise with relative scale
/// `base_noise + iou_noise * (1 - IoU)`. Objectness is the IoU itself.
template <typename Box>
class IouNoiseOracle final : public RegressionOracle<Box> {
 public:
  struct Params {
    double pull = 0.5;         // fraction of the offset kept per refine
    double base_noise = 0.005;
    double iou_noise = 0.15;
    double angle_noise = 0.3;  // radians at IoU 0
  };

  IouNoiseOracle(std::vector<Box> truths, Params p) : truths_(std::move(truths)), p_(p) {}
  explicit IouNoiseOracle(std::vector<Box> truths) : IouNoiseOracle(std::move(truths), Params{}) {}

  Box refine(const Box& box, Rng& rng) const override {
    const auto [t, q] = nearest(box);
    const double s = p_.base_noise + p_.iou_noise * (1.0 - q);
    if constexpr (std::is_same_v<Box, HBox>) {
      const double w = t.width(), h = t.height();
      auto mix = [&](double tv, double bv, double scale) { return tv + p_.pull * (bv - tv) + rng.normal() * s * scale; };
      HBox r{mix(t.x1, box.x1, w), mix(t.y1, box.y1, h), mix(t.x2, box.x2, w), mix(t.y2, box.y2, h)};
      if (r.x2 <= r.x1) r.x2 = r.x1 + 1e-3 * w;
      if (r.y2 <= r.y1) r.y2 = r.y1 + 1e-3 * h;
      return r;
    } else {
      const double size = 0.5 * (t.w + t.h);
      OBox r;
      r.cx = t.cx + p_.pull * (box.cx - t.cx) + rng.normal() * s * size;
      r.cy = t.cy + p_.pull * (box.cy - t.cy) + rng.normal() * s * size;
      r.w = std::max(1e-3 * t.w, t.w + p_.pull * (box.w - t.w) + rng.normal() * s * t.w);
      r.h = std::max(1e-3 * t.h, t.h + p_.pull * (box.h - t.h) + rng.normal() * s * t.h);
      r.a = t.a + p_.pull * wrap_half_pi(box.a - t.a) + rng.normal() * p_.angle_noise * (1.0 - q);
      return r;
    }
  }

  double foreground_score(const Box& box) const override { return nearest(box).second; }

 private:
  std::pair<Box, double> nearest(const Box& box) const {
    Box best = box;
    double best_iou = 0.0;
    for (const auto& t : truths_) {
      const double v = iou(box, t);
      if (v > best_iou) best_iou = v, best = t;
    }
    return {best, best_iou};
  }

  std::vector<Box> truths_;
  Params p_;
};

/// Refinement is the identity; objectness is looked up by exact box
/// coordinates, falling back to `fallback`.
template <typename Box>
class IdentityOracle final : public RegressionOracle<Box> {
 public:
  explicit IdentityOracle(double fallback = 1.0) : fallback_(fallback) {}
  void set_score(const Box& b, double s) { scores_[BoxTraits<Box>::to_array(b)] = s; }
  Box refine(const Box& box, Rng&) const override { return box; }
  double foreground_score(const Box& box) const override {
    const auto it = scores_.find(BoxTraits<Box>::to_array(box));
    return it == scores_.end() ? fallback_ : it->second;
  }

 private:
  std::map<std::array<double, BoxTraits<Box>::kDim>, double> scores_;
  double fallback_;
};

}  // namespace ovst
