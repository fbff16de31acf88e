// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "ovst/geometry/box.hpp"

namespace ovst {

using Polygon = std::vector<Point>;

/// Signed shoelace area; positive for counter-clockwise vertex order.
inline double signed_area(std::span<const Point> poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += cross(poly[i], poly[(i + 1) % n]);
  return 0.5 * acc;
}

inline double polygon_area(std::span<const Point> poly) { return std::abs(signed_area(poly)); }

/// Sutherland-Hodgman: clips `subject` against the convex, counter-clockwise
/// polygon `clip`. Points on a clip edge count as inside.
inline Polygon clip_convex(std::span<const Point> subject, std::span<const Point> clip) {
  Polygon out(subject.begin(), subject.end());
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !out.empty(); ++e) {
    const Point a = clip[e], b = clip[(e + 1) % m];
    const Point ab = b - a;
    const double scale = std::max(1.0, std::hypot(ab.x, ab.y));
    const double eps = 1e-12 * scale * scale;
    auto side = [&](Point p) { return cross(ab, p - a); };
    Polygon in = std::move(out);
    out.clear();
    const std::size_t n = in.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point p = in[i], q = in[(i + 1) % n];
      const double sp = side(p), sq = side(q);
      const bool p_in = sp >= -eps, q_in = sq >= -eps;
      if (p_in) out.push_back(p);
      if (p_in != q_in) {
        const double t = sp / (sp - sq);
        out.push_back(p + (q - p) * t);
      }
    }
  }
  return out;
}

/// Andrew's monotone chain; returns the hull counter-clockwise without
/// repeating the first point.
inline Polygon convex_hull(std::span<const Point> pts) {
  Polygon p(pts.begin(), pts.end());
  std::sort(p.begin(), p.end(), [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  p.erase(std::unique(p.begin(), p.end()), p.end());
  if (p.size() < 3) return p;
  Polygon h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 1] - h[k - 2], p[i] - h[k - 2]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 1] - h[k - 2], p[i] - h[k - 2]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  return h;
}

/// Minimum-area enclosing rotated rectangle of a point set. Candidate
/// directions are the input edges in order, followed by the hull edges;
/// the first candidate within rounding of the minimum wins, so an exact
/// rectangle given as p0->p1->p2->p3 returns w = |p0p1|, angle of p0->p1.
inline OBox min_area_rect(std::span<const Point> pts) {
  if (pts.size() < 3) throw InvariantError("min_area_rect needs at least 3 points");
  std::vector<Point> dirs;
  for (std::size_t i = 0; i < pts.size(); ++i) dirs.push_back(pts[(i + 1) % pts.size()] - pts[i]);
  const Polygon hull = convex_hull(pts);
  for (std::size_t i = 0; i < hull.size(); ++i) dirs.push_back(hull[(i + 1) % hull.size()] - hull[i]);

  OBox best{};
  double best_area = std::numeric_limits<double>::infinity();
  for (const Point d : dirs) {
    const double len = std::hypot(d.x, d.y);
    if (len <= 0.0) continue;
    const Point u{d.x / len, d.y / len}, n{-u.y, u.x};
    double umin = std::numeric_limits<double>::infinity(), umax = -umin, nmin = umin, nmax = -umin;
    for (const Point p : pts) {
      const double pu = dot(p, u), pn = dot(p, n);
      umin = std::min(umin, pu), umax = std::max(umax, pu);
      nmin = std::min(nmin, pn), nmax = std::max(nmax, pn);
    }
    const double area = (umax - umin) * (nmax - nmin);
    if (area < best_area * (1.0 - 1e-9)) {
      best_area = area;
      const double cu = 0.5 * (umin + umax), cn = 0.5 * (nmin + nmax);
      best = {cu * u.x + cn * n.x, cu * u.y + cn * n.y, umax - umin, nmax - nmin, std::atan2(u.y, u.x)};
    }
  }
  return canonicalize(best);
}

}  // namespace ovst
