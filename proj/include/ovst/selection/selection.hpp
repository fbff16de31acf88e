// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ovst/core/error.hpp"
#include "ovst/core/parallel.hpp"
#include "ovst/core/rng.hpp"
#include "ovst/geometry/box.hpp"

namespace ovst {

/// Stand-in for the class-agnostic regression branch and the proposal
/// network's objectness score. Randomness, if any, must come from `rng` so
/// that results are reproducible per candidate stream.
template <typename Box>
class RegressionOracle {
 public:
  virtual ~RegressionOracle() = default;
  virtual Box refine(const Box& box, Rng& rng) const = 0;
  virtual double foreground_score(const Box& box) const = 0;
};

enum class Strategy { kRpn, kBjv, kRjv, kSjv, kAjv, kAjvSjv };
enum class AngleTransform { kIdentity, kSin };
enum class KeepRule { kTopK, kThreshold };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "rpn") return Strategy::kRpn;
  if (s == "bjv") return Strategy::kBjv;
  if (s == "rjv") return Strategy::kRjv;
  if (s == "sjv") return Strategy::kSjv;
  if (s == "ajv") return Strategy::kAjv;
  if (s == "ajv+sjv" || s == "ajv_sjv") return Strategy::kAjvSjv;
  throw ConfigError("unknown selection strategy '" + s + "'");
}

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kRpn: return "rpn";
    case Strategy::kBjv: return "bjv";
    case Strategy::kRjv: return "rjv";
    case Strategy::kSjv: return "sjv";
    case Strategy::kAjv: return "ajv";
    case Strategy::kAjvSjv: return "ajv+sjv";
  }
  return "?";
}

inline AngleTransform parse_angle_transform(const std::string& s) {
  if (s == "identity") return AngleTransform::kIdentity;
  if (s == "sin") return AngleTransform::kSin;
  throw ConfigError("unknown angle transform '" + s + "'");
}

inline std::string angle_transform_name(AngleTransform f) { return f == AngleTransform::kSin ? "sin" : "identity"; }

struct SelectionConfig {
  int jitter_count = 10;         // M
  double jitter = 0.06;          // fraction of box width/height
  double angle_jitter = 0.1;     // radians
  Strategy strategy = Strategy::kBjv;
  KeepRule keep = KeepRule::kTopK;
  std::size_t top_k = 8;
  double threshold = 0.0;        // primary score threshold
  double angle_threshold = 0.0;  // AJV part of AJV+SJV under kThreshold
  AngleTransform angle_transform = AngleTransform::kSin;
  bool normalized_rjv = false;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (jitter_count < 2) throw ConfigError("selection: jitter count M must be at least 2");
    if (jitter < 0.0 || angle_jitter < 0.0) throw ConfigError("selection: jitter magnitudes must be non-negative");
  }
};

namespace detail {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population
};

// Welford's update; exact zero variance for constant input.
inline Moments moments(std::span<const double> xs) {
  Moments m;
  double m2 = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    ++n;
    const double d = x - m.mean;
    m.mean += d / static_cast<double>(n);
    m2 += d * (x - m.mean);
  }
  m.variance = n ? std::max(0.0, m2 / static_cast<double>(n)) : 0.0;
  return m;
}

template <std::size_t K>
std::array<Moments, K> coordinate_moments(const std::vector<std::array<double, K>>& rows) {
  std::array<Moments, K> out;
  std::vector<double> col(rows.size());
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < rows.size(); ++i) col[i] = rows[i][k];
    out[k] = moments(col);
  }
  return out;
}

inline void require_jitter_count(int m) {
  if (m < 2) throw ConfigError("jitter count M must be at least 2");
}

}  // namespace detail

/// Jitter each corner coordinate by U(-delta, delta) times the box width
/// (x) or height (y).
inline HBox jitter_hbox(const HBox& b, double delta, Rng& rng) {
  const double w = b.width(), h = b.height();
  return {b.x1 + rng.uniform(-delta, delta) * w, b.y1 + rng.uniform(-delta, delta) * h,
          b.x2 + rng.uniform(-delta, delta) * w, b.y2 + rng.uniform(-delta, delta) * h};
}

/// Jitter scale and angle with the center fixed.
inline OBox jitter_obox(const OBox& b, double delta, double angle_delta, Rng& rng) {
  return {b.cx, b.cy, b.w * (1.0 + rng.uniform(-delta, delta)), b.h * (1.0 + rng.uniform(-delta, delta)),
          b.a + rng.uniform(-angle_delta, angle_delta)};
}

inline double rpn_score(const HBox& box, const RegressionOracle<HBox>& oracle) { return oracle.foreground_score(box); }
inline double rpn_score(const OBox& box, const RegressionOracle<OBox>& oracle) { return oracle.foreground_score(box); }

/// Regression jittering variance from a list of iterates:
///   (1/4) sum_k var_k / (h_last^2 + w_last^2)
/// or, when `normalized`, (1/4) sum_k std_k / (0.5 (h_last + w_last)).
inline double rjv_from_iterates(const std::vector<HBox>& iterates, bool normalized = false) {
  if (iterates.size() < 2) throw ConfigError("rjv: need at least 2 iterates");
  const HBox& last = iterates.back();
  const double w = last.width(), h = last.height();
  if (!(w > 0.0) || !(h > 0.0)) throw InvariantError("rjv: degenerate last regression box");
  std::vector<std::array<double, 4>> rows;
  for (const auto& b : iterates) rows.push_back(BoxTraits<HBox>::to_array(b));
  const auto m = detail::coordinate_moments(rows);
  double acc = 0.0;
  for (const auto& mk : m) acc += normalized ? std::sqrt(mk.variance) / (0.5 * (h + w)) : mk.variance / (h * h + w * w);
  return 0.25 * acc;
}

/// Feeds the box through the regressor M times and scores the iterates.
inline double rjv(const HBox& box, const RegressionOracle<HBox>& oracle, int m, Rng& rng, bool normalized = false) {
  detail::require_jitter_count(m);
  std::vector<HBox> iterates;
  HBox cur = box;
  for (int i = 0; i < m; ++i) {
    cur = oracle.refine(cur, rng);
    iterates.push_back(cur);
  }
  return rjv_from_iterates(iterates, normalized);
}

/// (1/4) sum_k std_k / (0.5 (mean_h + mean_w)) over a set of refined boxes.
inline double bjv_from_refined(const std::vector<HBox>& refined) {
  if (refined.size() < 2) throw ConfigError("bjv: need at least 2 refined boxes");
  std::vector<std::array<double, 4>> rows;
  double mw = 0.0, mh = 0.0;
  for (const auto& b : refined) {
    rows.push_back(BoxTraits<HBox>::to_array(b));
    mw += b.width(), mh += b.height();
  }
  mw /= static_cast<double>(refined.size()), mh /= static_cast<double>(refined.size());
  if (!(mw > 0.0) || !(mh > 0.0)) throw InvariantError("bjv: degenerate refined boxes");
  const auto m = detail::coordinate_moments(rows);
  double acc = 0.0;
  for (const auto& mk : m) acc += std::sqrt(mk.variance) / (0.5 * (mh + mw));
  return 0.25 * acc;
}

inline double bjv(const HBox& box, const RegressionOracle<HBox>& oracle, int m, double delta, Rng& rng) {
  detail::require_jitter_count(m);
  std::vector<HBox> refined;
  for (int i = 0; i < m; ++i) refined.push_back(oracle.refine(jitter_hbox(box, delta, rng), rng));
  return bjv_from_refined(refined);
}

/// (1/2) sum_{w,h} std / (0.5 (mean_h + mean_w)).
inline double sjv_from_refined(const std::vector<OBox>& refined) {
  if (refined.size() < 2) throw ConfigError("sjv: need at least 2 refined boxes");
  std::vector<double> ws, hs;
  for (const auto& b : refined) ws.push_back(b.w), hs.push_back(b.h);
  const auto mw = detail::moments(ws), mh = detail::moments(hs);
  if (!(mw.mean > 0.0) || !(mh.mean > 0.0)) throw InvariantError("sjv: degenerate refined boxes");
  const double denom = 0.5 * (mh.mean + mw.mean);
  return 0.5 * (std::sqrt(mw.variance) / denom + std::sqrt(mh.variance) / denom);
}

inline double apply_angle_transform(double a, AngleTransform f) { return f == AngleTransform::kSin ? std::sin(a) : a; }

/// Population variance of f(angle).
inline double angle_variance(std::span<const double> angles, AngleTransform f) {
  if (angles.size() < 2) throw ConfigError("ajv: need at least 2 angles");
  std::vector<double> t;
  for (double a : angles) t.push_back(apply_angle_transform(a, f));
  return detail::moments(t).variance;
}

/// Angles are taken from the canonicalized refined boxes.
inline double ajv_from_refined(const std::vector<OBox>& refined, AngleTransform f) {
  std::vector<double> angles;
  for (const auto& b : refined) angles.push_back(canonicalize(b).a);
  return angle_variance(angles, f);
}

inline std::vector<OBox> refine_scale_jittered(const OBox& box, const RegressionOracle<OBox>& oracle, int m,
                                               double delta, double angle_delta, Rng& rng) {
  detail::require_jitter_count(m);
  std::vector<OBox> refined;
  for (int i = 0; i < m; ++i) refined.push_back(oracle.refine(jitter_obox(box, delta, angle_delta, rng), rng));
  return refined;
}

inline double sjv(const OBox& box, const RegressionOracle<OBox>& oracle, int m, double delta, double angle_delta,
                  Rng& rng) {
  return sjv_from_refined(refine_scale_jittered(box, oracle, m, delta, angle_delta, rng));
}

inline double ajv(const OBox& box, const RegressionOracle<OBox>& oracle, int m, double delta, double angle_delta,
                  AngleTransform f, Rng& rng) {
  return ajv_from_refined(refine_scale_jittered(box, oracle, m, delta, angle_delta, rng), f);
}

template <typename Box>
struct Candidate {
  Box box{};
  double rpn_score = 0.0;
};

struct SelectionResult {
  std::vector<double> scores;        // primary score per candidate (SJV for AJV+SJV)
  std::vector<double> angle_scores;  // AJV per candidate, AJV+SJV only
  std::vector<bool> keep;
  std::vector<std::size_t> kept;  // ascending candidate index
};

inline bool higher_is_better(Strategy s) { return s == Strategy::kRpn; }

/// Returns the kept indices for one score column under the keep rule.
inline std::vector<bool> keep_mask(std::span<const double> scores, bool higher_better, KeepRule rule, std::size_t k,
                                   double threshold) {
  std::vector<bool> keep(scores.size(), false);
  if (rule == KeepRule::kThreshold) {
    for (std::size_t i = 0; i < scores.size(); ++i)
      keep[i] = higher_better ? scores[i] >= threshold : scores[i] <= threshold;
    return keep;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return higher_better ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) keep[order[i]] = true;
  return keep;
}

/// Scores every candidate under the configured strategy and applies the
/// keep rule. Variance strategies keep the lowest scores, RPN the highest.
/// AJV+SJV keeps the intersection of both keep sets. Candidate i draws its
/// jitter from the stream derive_seed(seed, {i}).
template <typename Box>
SelectionResult select(std::span<const Candidate<Box>> candidates, const SelectionConfig& cfg,
                       const RegressionOracle<Box>& oracle) {
  cfg.validate();
  constexpr bool kHorizontal = std::is_same_v<Box, HBox>;
  const Strategy s = cfg.strategy;
  if (kHorizontal && (s == Strategy::kSjv || s == Strategy::kAjv || s == Strategy::kAjvSjv))
    throw ConfigError("strategy " + strategy_name(s) + " needs oriented boxes");
  if (!kHorizontal && (s == Strategy::kBjv || s == Strategy::kRjv))
    throw ConfigError("strategy " + strategy_name(s) + " needs horizontal boxes");

  SelectionResult r;
  const std::size_t n = candidates.size();
  r.scores.assign(n, 0.0);
  if (s == Strategy::kAjvSjv) r.angle_scores.assign(n, 0.0);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(i)}));
    const Box& b = candidates[i].box;
    if (s == Strategy::kRpn) {
      r.scores[i] = oracle.foreground_score(b);
      return;
    }
    if constexpr (kHorizontal) {
      r.scores[i] = s == Strategy::kRjv ? rjv(b, oracle, cfg.jitter_count, rng, cfg.normalized_rjv)
                                        : bjv(b, oracle, cfg.jitter_count, cfg.jitter, rng);
    } else {
      const auto refined = refine_scale_jittered(b, oracle, cfg.jitter_count, cfg.jitter, cfg.angle_jitter, rng);
      if (s == Strategy::kSjv) {
        r.scores[i] = sjv_from_refined(refined);
      } else if (s == Strategy::kAjv) {
        r.scores[i] = ajv_from_refined(refined, cfg.angle_transform);
      } else {
        r.scores[i] = sjv_from_refined(refined);
        r.angle_scores[i] = ajv_from_refined(refined, cfg.angle_transform);
      }
    }
  });

  r.keep = keep_mask(r.scores, higher_is_better(s), cfg.keep, cfg.top_k, cfg.threshold);
  if (s == Strategy::kAjvSjv) {
    const auto angle_keep = keep_mask(r.angle_scores, false, cfg.keep, cfg.top_k, cfg.angle_threshold);
    for (std::size_t i = 0; i < n; ++i) r.keep[i] = r.keep[i] && angle_keep[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    if (r.keep[i]) r.kept.push_back(i);
  return r;
}

}  // namespace ovst
