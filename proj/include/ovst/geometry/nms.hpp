// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "ovst/core/error.hpp"
#include "ovst/geometry/iou.hpp"

namespace ovst {

template <typename Box>
struct ScoredBox {
  Box box;
  double score = 0.0;
  int category = 0;
};

/// Indices sorted by (score desc, index asc).
template <typename Box>
std::vector<std::size_t> score_order(std::span<const ScoredBox<Box>> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

/// Greedy non-maximum suppression. Returns kept indices in score order. A
/// box is suppressed when its IoU with an already kept box (of the same
/// category when class_aware) is strictly greater than iou_thresh.
template <typename Box>
std::vector<std::size_t> nms(std::span<const ScoredBox<Box>> dets, double iou_thresh, bool class_aware) {
  for (const auto& d : dets)
    if (!std::isfinite(d.score)) throw InvariantError("nms: non-finite score");
  const auto order = score_order(dets);
  std::vector<std::size_t> kept;
  for (const std::size_t i : order) {
    bool suppressed = false;
    for (const std::size_t k : kept) {
      if (class_aware && dets[k].category != dets[i].category) continue;
      if (iou(dets[k].box, dets[i].box) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

template <typename Box>
std::vector<ScoredBox<Box>> nms_select(std::span<const ScoredBox<Box>> dets, double iou_thresh, bool class_aware) {
  std::vector<ScoredBox<Box>> out;
  for (const auto i : nms(dets, iou_thresh, class_aware)) out.push_back(dets[i]);
  return out;
}

}  // namespace ovst
