// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <span>

#include "ovst/geometry/box.hpp"

namespace ovst {

template <typename Box>
using Deltas = std::array<double, BoxTraits<Box>::kDim>;

/// Offsets taking `from` to `to`: (dcx/w, dcy/h, dlog w, dlog h) and, for
/// oriented boxes, the center offset in the rotated frame of `from` plus an
/// angle difference wrapped into [-pi/2, pi/2).
inline Deltas<HBox> encode_deltas(const HBox& from, const HBox& to) {
  const double w = from.width(), h = from.height();
  return {(to.cx() - from.cx()) / w, (to.cy() - from.cy()) / h, std::log(to.width() / w), std::log(to.height() / h)};
}

inline HBox apply_deltas(const HBox& b, std::span<const double> d) {
  const double w = b.width() * std::exp(d[2]), h = b.height() * std::exp(d[3]);
  const double cx = b.cx() + d[0] * b.width(), cy = b.cy() + d[1] * b.height();
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline Deltas<OBox> encode_deltas(const OBox& from, const OBox& to) {
  const double c = std::cos(from.a), s = std::sin(from.a);
  const double dx = to.cx - from.cx, dy = to.cy - from.cy;
  return {(c * dx + s * dy) / from.w, (-s * dx + c * dy) / from.h, std::log(to.w / from.w), std::log(to.h / from.h),
          wrap_half_pi(to.a - from.a)};
}

inline OBox apply_deltas(const OBox& b, std::span<const double> d) {
  const double c = std::cos(b.a), s = std::sin(b.a);
  const double lx = d[0] * b.w, ly = d[1] * b.h;
  return {b.cx + c * lx - s * ly, b.cy + s * lx + c * ly, b.w * std::exp(d[2]), b.h * std::exp(d[3]),
          wrap_half_pi(b.a + d[4])};
}

}  // namespace ovst
