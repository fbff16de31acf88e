// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <vector>

#include "ovst/core/error.hpp"
#include "ovst/geometry/detection.hpp"
#include "ovst/geometry/nms.hpp"

namespace ovst {

struct PatchOrigin {
  int x = 0;
  int y = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

/// Tiling of one image into square patches of `size` pixels.
struct PatchGrid {
  int image_width = 0;
  int image_height = 0;
  int size = 1024;
  int overlap = 200;
  std::vector<PatchOrigin> origins;  // row-major: y outer, x inner

  int stride() const { return size - overlap; }
  int patch_width(const PatchOrigin& o) const { return std::min(size, image_width - o.x); }
  int patch_height(const PatchOrigin& o) const { return std::min(size, image_height - o.y); }
};

/// Start offsets along one axis: steps of `stride` with the last patch
/// clamped to end exactly at the border.
inline std::vector<int> patch_starts(int length, int size, int stride) {
  std::vector<int> starts{0};
  if (length <= size) return starts;
  for (int x = stride; x + size < length; x += stride) starts.push_back(x);
  if (starts.back() != length - size) starts.push_back(length - size);
  return starts;
}

inline PatchGrid split_patches(int width, int height, int size = 1024, int overlap = 200) {
  if (width <= 0 || height <= 0) throw ConfigError("split_patches: image size must be positive");
  if (size <= 0 || overlap < 0) throw ConfigError("split_patches: bad patch size or overlap");
  if (overlap >= size) throw ConfigError("split_patches: overlap must be smaller than patch size");
  PatchGrid g{width, height, size, overlap, {}};
  const auto xs = patch_starts(width, size, g.stride());
  const auto ys = patch_starts(height, size, g.stride());
  for (int y : ys)
    for (int x : xs) g.origins.push_back({x, y});
  return g;
}

/// A detection in patch-local coordinates, tagged with its patch index.
template <typename Box>
struct PatchDetection {
  std::size_t patch = 0;
  Detection<Box> det;
};

/// Moves patch-local detections into image coordinates and applies
/// class-aware NMS per image across patches.
template <typename Box>
std::vector<Detection<Box>> remap_and_merge(std::span<const PatchDetection<Box>> per_patch, const PatchGrid& grid,
                                            double iou_thresh) {
  std::map<std::int64_t, std::vector<ScoredBox<Box>>> by_image;
  for (const auto& pd : per_patch) {
    if (pd.patch >= grid.origins.size())
      throw InvariantError("remap_and_merge: detection references unknown patch " + std::to_string(pd.patch));
    const auto& o = grid.origins[pd.patch];
    by_image[pd.det.image_id].push_back(
        {translate(pd.det.box, static_cast<double>(o.x), static_cast<double>(o.y)), pd.det.score, pd.det.category});
  }
  std::vector<Detection<Box>> out;
  for (const auto& [image_id, dets] : by_image) {
    for (const auto i : nms<Box>(dets, iou_thresh, true))
      out.push_back({image_id, dets[i].box, dets[i].category, dets[i].score});
  }
  return out;
}

}  // namespace ovst
