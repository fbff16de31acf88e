// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ovst/annotations/vocabulary.hpp"
#include "ovst/geometry/box.hpp"
#include "ovst/geometry/iou.hpp"
#include "ovst/geometry/patches.hpp"
#include "ovst/geometry/polygon.hpp"

namespace ovst {

template <typename Box>
struct Instance {
  Box box{};
  int category_id = 0;
  bool difficult = false;
};

template <typename Box>
struct ImageRecord {
  std::int64_t image_id = 0;
  std::string path;
  int width = 0;
  int height = 0;
  std::vector<Instance<Box>> instances;
};

/// Ground truth withheld from the unlabeled split, kept only for scoring.
template <typename Box>
using HiddenLabels = std::map<std::int64_t, std::vector<Instance<Box>>>;

template <typename Box>
struct Dataset {
  Vocabulary vocabulary;
  std::vector<ImageRecord<Box>> labeled;
  std::vector<ImageRecord<Box>> unlabeled;
  HiddenLabels<Box> hidden;
};

template <typename Box>
struct MaskedRecords {
  std::vector<ImageRecord<Box>> records;
  HiddenLabels<Box> hidden;
};

/// Strips instances from every record; the removed labels go to a side table.
template <typename Box>
MaskedRecords<Box> mask_to_unlabeled(std::vector<ImageRecord<Box>> records) {
  MaskedRecords<Box> out;
  for (auto& r : records) {
    out.hidden[r.image_id] = std::move(r.instances);
    r.instances.clear();
  }
  out.records = std::move(records);
  return out;
}

/// Keeps only base-category instances.
template <typename Box>
std::vector<ImageRecord<Box>> filter_base_annotations(std::vector<ImageRecord<Box>> records, const Vocabulary& vocab) {
  for (auto& r : records) {
    std::erase_if(r.instances, [&](const Instance<Box>& inst) { return vocab.is_novel(inst.category_id); });
  }
  return records;
}

/// Fraction of an instance that must survive cropping to be kept.
inline constexpr double kMinKeptAreaRatio = 0.2;

/// Clips a box to the window [x0, x0+w] x [y0, y0+h]. Returns nothing when
/// less than `min_ratio` of the original area remains. Partially cut
/// rotated boxes are replaced by the minimum-area rectangle of the clipped
/// polygon.
inline std::optional<HBox> clip_to_window(const HBox& b, double x0, double y0, double w, double h,
                                          double min_ratio = kMinKeptAreaRatio) {
  const HBox c{std::max(b.x1, x0), std::max(b.y1, y0), std::min(b.x2, x0 + w), std::min(b.y2, y0 + h)};
  if (!c.valid() || c.area() < kMinBoxArea || c.area() < min_ratio * b.area()) return std::nullopt;
  return c;
}

inline std::optional<OBox> clip_to_window(const OBox& b, double x0, double y0, double w, double h,
                                          double min_ratio = kMinKeptAreaRatio) {
  const ConvexQuad window = hbox_to_quad({x0, y0, x0 + w, y0 + h});
  const ConvexQuad q = obox_to_quad(b);
  const Polygon clipped = clip_convex(q, window);
  const double area = polygon_area(clipped);
  if (area < kMinBoxArea || area < min_ratio * b.area()) return std::nullopt;
  if (area >= b.area() * (1.0 - 1e-9)) return b;
  if (clipped.size() < 3) return std::nullopt;
  return min_area_rect(clipped);
}

/// Clamps all instances into the image, dropping ones that shrink too much.
template <typename Box>
ImageRecord<Box> clamp_instances(ImageRecord<Box> r) {
  std::vector<Instance<Box>> kept;
  for (const auto& inst : r.instances) {
    if (auto c = clip_to_window(inst.box, 0.0, 0.0, r.width, r.height)) kept.push_back({*c, inst.category_id, inst.difficult});
  }
  r.instances = std::move(kept);
  return r;
}

/// One record per patch, instances in patch-local coordinates. Patch
/// records get ids `image_id * 10000 + patch index` and a path suffixed
/// with the patch origin.
template <typename Box>
std::vector<ImageRecord<Box>> split_record(const ImageRecord<Box>& r, int size = 1024, int overlap = 200) {
  const PatchGrid grid = split_patches(r.width, r.height, size, overlap);
  std::vector<ImageRecord<Box>> out;
  for (std::size_t p = 0; p < grid.origins.size(); ++p) {
    const auto& o = grid.origins[p];
    ImageRecord<Box> pr;
    pr.image_id = r.image_id * 10000 + static_cast<std::int64_t>(p);
    pr.path = r.path + "__" + std::to_string(o.x) + "_" + std::to_string(o.y);
    pr.width = grid.patch_width(o);
    pr.height = grid.patch_height(o);
    for (const auto& inst : r.instances) {
      if (auto c = clip_to_window(inst.box, o.x, o.y, pr.width, pr.height))
        pr.instances.push_back({translate(*c, -o.x, -o.y), inst.category_id, inst.difficult});
    }
    out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace ovst
