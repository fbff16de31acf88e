// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "ovst/core/error.hpp"

namespace ovst {

/// Boxes whose area falls below this many square pixels are rejected.
inline constexpr double kMinBoxArea = 1e-6;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(Point a, double s) { return {a.x * s, a.y * s}; }
  friend bool operator==(Point, Point) = default;
};

inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

/// Axis-aligned box in image pixels.
struct HBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 &&
           y1 < y2;
  }
  friend bool operator==(const HBox&, const HBox&) = default;
};

/// Rotated rectangle: center, side lengths and rotation in radians.
struct OBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0, a = 0.0;

  double area() const { return w * h; }
  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && std::isfinite(a) &&
           w > 0.0 && h > 0.0;
  }
  friend bool operator==(const OBox&, const OBox&) = default;
};

/// Wraps an angle into [-pi/2, pi/2). A rectangle is invariant under a
/// half-turn so this preserves the vertex set.
inline double wrap_half_pi(double a) {
  constexpr double pi = std::numbers::pi;
  double r = a - pi * std::floor((a + pi / 2) / pi);
  if (r >= pi / 2) r -= pi;
  if (r < -pi / 2) r += pi;
  return r;
}

inline OBox canonicalize(const OBox& b) { return {b.cx, b.cy, b.w, b.h, wrap_half_pi(b.a)}; }

/// Four corners, counter-clockwise (positive signed area in x-right/y-up terms).
using ConvexQuad = std::array<Point, 4>;

inline ConvexQuad obox_to_quad(const OBox& b) {
  const double c = std::cos(b.a), s = std::sin(b.a);
  const double hw = 0.5 * b.w, hh = 0.5 * b.h;
  const std::array<Point, 4> local{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
  ConvexQuad q;
  for (std::size_t i = 0; i < 4; ++i)
    q[i] = {b.cx + local[i].x * c - local[i].y * s, b.cy + local[i].x * s + local[i].y * c};
  return q;
}

inline ConvexQuad hbox_to_quad(const HBox& b) { return {{{b.x1, b.y1}, {b.x2, b.y1}, {b.x2, b.y2}, {b.x1, b.y2}}}; }

inline OBox hbox_to_obox(const HBox& b) { return {b.cx(), b.cy(), b.width(), b.height(), 0.0}; }

/// Smallest axis-aligned box enclosing the rotated rectangle.
inline HBox enclosing_hbox(const OBox& b) {
  const double c = std::abs(std::cos(b.a)), s = std::abs(std::sin(b.a));
  const double hw = 0.5 * (b.w * c + b.h * s), hh = 0.5 * (b.w * s + b.h * c);
  return {b.cx - hw, b.cy - hh, b.cx + hw, b.cy + hh};
}

inline HBox translate(const HBox& b, double dx, double dy) { return {b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy}; }
inline OBox translate(const OBox& b, double dx, double dy) { return {b.cx + dx, b.cy + dy, b.w, b.h, b.a}; }

inline HBox scale(const HBox& b, double s) { return {b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s}; }
inline OBox scale(const OBox& b, double s) { return {b.cx * s, b.cy * s, b.w * s, b.h * s, b.a}; }

inline void validate(const HBox& b) {
  if (!b.valid() || b.area() < kMinBoxArea) throw InvariantError("invalid horizontal box");
}
inline void validate(const OBox& b) {
  if (!b.valid() || b.area() < kMinBoxArea) throw InvariantError("invalid oriented box");
}

/// Compile-time description of a box kind used by generic code.
template <typename Box>
struct BoxTraits;

template <>
struct BoxTraits<HBox> {
  static constexpr std::size_t kDim = 4;
  static constexpr const char* kName = "hbox";
  static constexpr std::array<const char*, 4> kFields{"x1", "y1", "x2", "y2"};
  static std::array<double, 4> to_array(const HBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }
  static HBox from_array(std::span<const double> v) { return {v[0], v[1], v[2], v[3]}; }
  static double width(const HBox& b) { return b.width(); }
  static double height(const HBox& b) { return b.height(); }
  static HBox from_obox(const OBox& b) { return enclosing_hbox(b); }
};

template <>
struct BoxTraits<OBox> {
  static constexpr std::size_t kDim = 5;
  static constexpr const char* kName = "obox";
  static constexpr std::array<const char*, 5> kFields{"cx", "cy", "w", "h", "a"};
  static std::array<double, 5> to_array(const OBox& b) { return {b.cx, b.cy, b.w, b.h, b.a}; }
  static OBox from_array(std::span<const double> v) { return {v[0], v[1], v[2], v[3], v[4]}; }
  static double width(const OBox& b) { return b.w; }
  static double height(const OBox& b) { return b.h; }
  static OBox from_obox(const OBox& b) { return canonicalize(b); }
};

}  // namespace ovst
