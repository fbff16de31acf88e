// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ovst/core/error.hpp"
#include "ovst/model/box_coder.hpp"
#include "ovst/model/student.hpp"

namespace ovst {

inline constexpr int kBackgroundLabel = -1;

/// One proposal entering a loss: its feature, the assigned category (or
/// background), an optional regression target and, for background
/// weighting, the teacher's background probability.
template <typename Box>
struct RegionSample {
  Box box{};
  Eigen::VectorXd feature;
  int label = kBackgroundLabel;
  std::optional<Box> target;
  double bg_score = 1.0;
};

struct ClsTerm {
  Eigen::VectorXd feature;
  Eigen::Index label = 0;  // K denotes background
  double weight = 0.0;
};

struct RegTerm {
  Eigen::VectorXd feature;
  Eigen::VectorXd target;  // encoded deltas
  double weight = 0.0;
};

/// A loss as a weighted sum of per-proposal cross-entropy and L1 terms.
struct LossTerms {
  std::vector<ClsTerm> cls;
  std::vector<RegTerm> reg;

  void append(LossTerms other) {
    for (auto& t : other.cls) cls.push_back(std::move(t));
    for (auto& t : other.reg) reg.push_back(std::move(t));
  }
  void scale(double s) {
    for (auto& t : cls) t.weight *= s;
    for (auto& t : reg) t.weight *= s;
  }
};

template <typename Box>
Eigen::VectorXd encoded_target(const Box& from, const Box& to) {
  const auto d = encode_deltas(from, to);
  return Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
}

namespace detail {

inline Eigen::Index cls_index(int label, Eigen::Index num_categories) {
  if (label == kBackgroundLabel) return num_categories;
  if (label < 0 || label >= num_categories) throw InvariantError("loss: label outside the vocabulary");
  return label;
}

template <typename Box>
void add_regression(LossTerms& t, std::span<const RegionSample<Box>> s, double weight) {
  std::size_t n = 0;
  for (const auto& r : s) n += r.target.has_value();
  if (n == 0) return;
  for (const auto& r : s)
    if (r.target) t.reg.push_back({r.feature, encoded_target(r.box, *r.target), weight / static_cast<double>(n)});
}

}  // namespace detail

/// CE averaged over every proposal plus L1 averaged over the foreground.
template <typename Box>
LossTerms supervised_terms(std::span<const RegionSample<Box>> s, Eigen::Index num_categories, double weight = 1.0) {
  if (s.empty()) throw InvariantError("supervised loss: empty batch");
  LossTerms t;
  for (const auto& r : s)
    t.cls.push_back({r.feature, detail::cls_index(r.label, num_categories), weight / static_cast<double>(s.size())});
  std::vector<RegionSample<Box>> fg;
  for (const auto& r : s)
    if (r.label != kBackgroundLabel) fg.push_back(r);
  detail::add_regression<Box>(t, fg, weight);
  return t;
}

/// Foreground CE averaged over the foreground plus background CE weighted
/// by w_j = bg_score_j / sum_k bg_score_k over the batch's background set.
template <typename Box>
LossTerms weighted_cls_terms(std::span<const RegionSample<Box>> s, Eigen::Index num_categories, double weight = 1.0) {
  LossTerms t;
  std::size_t nfg = 0, nbg = 0;
  double bg_total = 0.0;
  for (const auto& r : s) {
    if (r.label == kBackgroundLabel) {
      if (!(r.bg_score >= 0.0) || !std::isfinite(r.bg_score)) throw InvariantError("loss: invalid background score");
      ++nbg, bg_total += r.bg_score;
    } else {
      ++nfg;
    }
  }
  for (const auto& r : s) {
    double w;
    if (r.label == kBackgroundLabel)
      w = bg_total > 0.0 ? r.bg_score / bg_total : 1.0 / static_cast<double>(nbg);
    else
      w = 1.0 / static_cast<double>(nfg);
    t.cls.push_back({r.feature, detail::cls_index(r.label, num_categories), weight * w});
  }
  return t;
}

/// Mean L1 over the samples carrying a regression target; empty otherwise.
template <typename Box>
LossTerms regression_terms(std::span<const RegionSample<Box>> s, double weight = 1.0) {
  LossTerms t;
  detail::add_regression<Box>(t, s, weight);
  return t;
}

/// Value and (optionally) the packed gradient of a term list.
inline double loss_and_grad(const StudentParams& p, const LossTerms& terms, Eigen::VectorXd* grad = nullptr) {
  const Eigen::Index k = p.num_categories();
  const double tau = p.head.tau();
  Eigen::MatrixXd text = p.head.text;
  for (Eigen::Index i = 0; i < text.rows(); ++i) {
    const double n = text.row(i).norm();
    if (n > 0.0) text.row(i) /= n;
  }
  const bool has_bg = p.head.background != BackgroundMode::kZero && p.head.background_vec.norm() > 0.0;
  const double bnorm = has_bg ? p.head.background_vec.norm() : 1.0;
  const Eigen::VectorXd bhat = has_bg ? Eigen::VectorXd(p.head.background_vec / bnorm) : Eigen::VectorXd();

  StudentParams g;
  if (grad) {
    g.projector = Eigen::MatrixXd::Zero(p.projector.rows(), p.projector.cols());
    g.regressor = Eigen::MatrixXd::Zero(p.regressor.rows(), p.regressor.cols());
    g.reg_bias = Eigen::VectorXd::Zero(p.reg_bias.size());
    g.head.background = p.head.background;
    g.head.background_vec = Eigen::VectorXd::Zero(p.head.background_vec.size());
    g.head.log_tau = 0.0;
    g.learn_temperature = p.learn_temperature;
  }

  double total = 0.0;
  for (const auto& t : terms.cls) {
    if (t.weight == 0.0) continue;
    check_feature(p, t.feature);
    if (t.label < 0 || t.label > k) throw InvariantError("loss: label outside the head");
    const Eigen::VectorXd v = p.projector * t.feature;
    const double vn = v.norm();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(k + 1);
    Eigen::VectorXd u;
    if (vn >= 1e-12) {
      u = v / vn;
      s.head(k) = text * u / tau;
      if (has_bg) s[k] = bhat.dot(u) / tau;
    }
    const double m = s.maxCoeff();
    const Eigen::VectorXd e = (s.array() - m).exp().matrix();
    const double z = e.sum();
    total += t.weight * (m + std::log(z) - s[t.label]);
    if (!grad) continue;
    Eigen::VectorXd gs = e / z;
    gs[t.label] -= 1.0;
    gs *= t.weight;
    if (p.learn_temperature) g.head.log_tau -= gs.dot(s);
    if (vn < 1e-12) continue;
    Eigen::VectorXd a = text.transpose() * gs.head(k);
    if (has_bg) a += gs[k] * bhat;
    const Eigen::VectorXd dv = (a - u * u.dot(a)) / (tau * vn);
    g.projector.noalias() += dv * t.feature.transpose();
    if (has_bg && p.head.background == BackgroundMode::kLearnable)
      g.head.background_vec += gs[k] * (u - bhat * bhat.dot(u)) / (tau * bnorm);
  }
  for (const auto& t : terms.reg) {
    if (t.weight == 0.0) continue;
    check_feature(p, t.feature);
    if (t.target.size() != p.regressor.rows()) throw InvariantError("loss: regression target size mismatch");
    const Eigen::VectorXd r = p.regressor * t.feature + p.reg_bias - t.target;
    const double kd = static_cast<double>(r.size());
    total += t.weight * r.cwiseAbs().sum() / kd;
    if (!grad) continue;
    const Eigen::VectorXd gr = r.unaryExpr([](double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }) *
                               (t.weight / kd);
    g.regressor.noalias() += gr * t.feature.transpose();
    g.reg_bias += gr;
  }
  if (grad) *grad = pack(g);
  return total;
}

inline double loss_value(const StudentParams& p, const LossTerms& terms) { return loss_and_grad(p, terms, nullptr); }

template <typename Box>
double loss_supervised(const StudentParams& p, std::span<const RegionSample<Box>> s) {
  return loss_value(p, supervised_terms<Box>(s, p.num_categories()));
}

template <typename Box>
double loss_unsup_cls(const StudentParams& p, std::span<const RegionSample<Box>> s) {
  return loss_value(p, weighted_cls_terms<Box>(s, p.num_categories()));
}

template <typename Box>
double loss_unsup_reg(const StudentParams& p, std::span<const RegionSample<Box>> s) {
  return loss_value(p, regression_terms<Box>(s));
}

/// Queue flow: the weighted classification loss, plus regression when asked.
template <typename Box>
LossTerms queue_terms(std::span<const RegionSample<Box>> s, Eigen::Index num_categories, bool with_regression,
                      double weight = 1.0) {
  auto t = weighted_cls_terms<Box>(s, num_categories, weight);
  if (with_regression) t.append(regression_terms<Box>(s, weight));
  return t;
}

template <typename Box>
double loss_queue_cls(const StudentParams& p, std::span<const RegionSample<Box>> s, bool with_regression = false) {
  return loss_value(p, queue_terms<Box>(s, p.num_categories(), with_regression));
}

inline double total_loss(double ls, double lu, double ld, double alpha, double beta, double gamma) {
  if (!std::isfinite(ls) || !std::isfinite(lu) || !std::isfinite(ld)) throw InvariantError("total_loss: non-finite component");
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw ConfigError("total_loss: weights must be non-negative");
  return alpha * ls + beta * lu + gamma * ld;
}

}  // namespace ovst
