// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ovst/core/error.hpp"
#include "ovst/core/rng.hpp"

namespace ovst {

enum class BackgroundMode { kZero, kNormalizedMean, kLearnable };

inline BackgroundMode parse_background_mode(const std::string& s) {
  if (s == "zero") return BackgroundMode::kZero;
  if (s == "mean" || s == "normalized-mean") return BackgroundMode::kNormalizedMean;
  if (s == "learnable") return BackgroundMode::kLearnable;
  throw ConfigError("unknown background mode '" + s + "'");
}

inline std::string background_mode_name(BackgroundMode m) {
  switch (m) {
    case BackgroundMode::kZero: return "zero";
    case BackgroundMode::kNormalizedMean: return "normalized-mean";
    case BackgroundMode::kLearnable: return "learnable";
  }
  return "?";
}

inline constexpr double kDefaultTemperature = 0.07;

/// Semantic classifier: category embeddings act as the weights of the last
/// layer, scored by temperature-scaled cosine similarity. Scores carry one
/// extra trailing entry for background.
struct ClassifierHead {
  Eigen::MatrixXd text;  // K x d, unit rows
  double log_tau = std::log(kDefaultTemperature);
  BackgroundMode background = BackgroundMode::kZero;
  Eigen::VectorXd background_vec;  // d; unused in kZero mode

  Eigen::Index num_categories() const { return text.rows(); }
  Eigen::Index background_index() const { return text.rows(); }
  Eigen::Index dim() const { return text.cols(); }
  double tau() const { return std::exp(log_tau); }
};

/// Builds a head; the learnable background starts as a small random vector
/// and the mean background is the re-normalized mean of the embeddings.
inline ClassifierHead make_head(Eigen::MatrixXd text, BackgroundMode mode, std::uint64_t seed = 0,
                                double tau = kDefaultTemperature) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  ClassifierHead h;
  h.log_tau = std::log(tau);
  h.background = mode;
  const auto d = text.cols();
  if (mode == BackgroundMode::kNormalizedMean) {
    Eigen::VectorXd m = text.colwise().mean().transpose();
    const double n = m.norm();
    h.background_vec = n > 0.0 ? Eigen::VectorXd(m / n) : Eigen::VectorXd::Zero(d);
  } else if (mode == BackgroundMode::kLearnable) {
    Rng rng(seed);
    h.background_vec.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) h.background_vec[i] = 0.1 * rng.normal();
  } else {
    h.background_vec = Eigen::VectorXd::Zero(d);
  }
  h.text = std::move(text);
  return h;
}

/// s_j = v.t_j / (tau |v| |t_j|) for each category, then the background score.
inline Eigen::VectorXd similarity(const Eigen::VectorXd& v, const ClassifierHead& head) {
  if (v.size() != head.dim()) throw InvariantError("similarity: feature dimension mismatch");
  const double vn = v.norm();
  if (!(vn > 0.0) || !std::isfinite(vn)) throw InvariantError("similarity: zero-norm region feature");
  const double tau = head.tau();
  Eigen::VectorXd s(head.num_categories() + 1);
  const Eigen::VectorXd tn = head.text.rowwise().norm();
  s.head(head.num_categories()) = (head.text * v).cwiseQuotient(tn) / (tau * vn);
  double bg = 0.0;
  if (head.background != BackgroundMode::kZero) {
    const double bn = head.background_vec.norm();
    if (bn > 0.0) bg = head.background_vec.dot(v) / (tau * vn * bn);
  }
  s[head.background_index()] = bg;
  return s;
}

/// Max-shifted softmax.
inline Eigen::VectorXd predict_probs(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) return scores;
  const double m = scores.maxCoeff();
  Eigen::VectorXd e = (scores.array() - m).exp().matrix();
  return e / e.sum();
}

template <typename Box>
struct LabeledBox {
  Box box{};
  int category = 0;
  double score = 0.0;
};

/// Keeps regions whose top probability reaches p0 (inclusive), labeled with
/// the argmax category. When `last_is_background`, regions whose argmax is
/// the trailing background entry are dropped.
template <typename Box>
std::vector<LabeledBox<Box>> filter_pseudo_labels(std::span<const Box> boxes, std::span<const Eigen::VectorXd> probs,
                                                  double p0, bool last_is_background = true) {
  if (boxes.size() != probs.size()) throw InvariantError("filter_pseudo_labels: size mismatch");
  if (!(p0 >= 0.0 && p0 <= 1.0)) throw ConfigError("filter_pseudo_labels: p0 must lie in [0, 1]");
  std::vector<LabeledBox<Box>> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& p = probs[i];
    if (p.size() == 0) continue;
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    if (last_is_background && best == p.size() - 1) continue;
    if (p[best] >= p0) out.push_back({boxes[i], static_cast<int>(best), p[best]});
  }
  return out;
}

}  // namespace ovst
