// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>

#include "ovst/geometry/box.hpp"
#include "ovst/geometry/polygon.hpp"

namespace ovst {

inline double intersection_area(const HBox& a, const HBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
}

inline double iou(const HBox& a, const HBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double intersection_area(const OBox& a, const OBox& b) {
  const ConvexQuad qa = obox_to_quad(a), qb = obox_to_quad(b);
  return polygon_area(clip_convex(qa, qb));
}

/// Rotated IoU by convex clipping. Throws on degenerate boxes.
inline double iou(const OBox& a, const OBox& b) {
  validate(a);
  validate(b);
  // Cheap reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.w, a.h), rb = 0.5 * std::hypot(b.w, b.h);
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb) return 0.0;
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double iou_h(const HBox& a, const HBox& b) { return iou(a, b); }
inline double iou_r(const OBox& a, const OBox& b) { return iou(a, b); }

}  // namespace ovst
