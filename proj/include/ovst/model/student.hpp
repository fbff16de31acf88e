// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ovst/classifier/head.hpp"
#include "ovst/core/error.hpp"
#include "ovst/core/rng.hpp"
#include "ovst/geometry/box.hpp"
#include "ovst/model/box_coder.hpp"

namespace ovst {

/// Linear region projector, class-agnostic linear box regressor and a
/// semantic head over frozen category embeddings. The teacher has the same
/// layout.
struct StudentParams {
  ClassifierHead head;        // text frozen; background_vec trained in learnable mode
  Eigen::MatrixXd projector;  // d_emb x d_feat
  Eigen::MatrixXd regressor;  // k x d_feat
  Eigen::VectorXd reg_bias;   // k
  bool learn_temperature = true;

  Eigen::Index feature_dim() const { return projector.cols(); }
  Eigen::Index num_categories() const { return head.num_categories(); }
  Eigen::Index background_label() const { return head.num_categories(); }
};
using TeacherParams = StudentParams;

/// Random projector with N(0, 1/d_feat) entries; zero regressor.
inline StudentParams make_student(ClassifierHead head, Eigen::Index feature_dim, Eigen::Index box_dim,
                                  std::uint64_t seed, bool learn_temperature = true) {
  if (feature_dim <= 0) throw ConfigError("feature dimension must be positive");
  if (box_dim != 4 && box_dim != 5) throw ConfigError("box dimension must be 4 or 5");
  StudentParams p;
  p.projector.resize(head.dim(), feature_dim);
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (Eigen::Index j = 0; j < p.projector.cols(); ++j)
    for (Eigen::Index i = 0; i < p.projector.rows(); ++i) p.projector(i, j) = s * rng.normal();
  p.regressor = Eigen::MatrixXd::Zero(box_dim, feature_dim);
  p.reg_bias = Eigen::VectorXd::Zero(box_dim);
  p.head = std::move(head);
  p.learn_temperature = learn_temperature;
  return p;
}

/// Visits the trainable blocks in a fixed order: projector, regressor,
/// reg_bias, background (learnable mode only), log_tau (when trained).
/// `f(name, data, size, decayed)`.
template <typename P, typename F>
void for_each_block(P& p, F&& f) {
  f("projector", p.projector.data(), p.projector.size(), true);
  f("regressor", p.regressor.data(), p.regressor.size(), true);
  f("reg_bias", p.reg_bias.data(), p.reg_bias.size(), true);
  if (p.head.background == BackgroundMode::kLearnable)
    f("background", p.head.background_vec.data(), p.head.background_vec.size(), true);
  if (p.learn_temperature) f("log_tau", &p.head.log_tau, Eigen::Index{1}, false);
}

inline Eigen::Index num_trainable(const StudentParams& p) {
  Eigen::Index n = 0;
  for_each_block(p, [&](const char*, const double*, Eigen::Index size, bool) { n += size; });
  return n;
}

inline Eigen::VectorXd pack(const StudentParams& p) {
  Eigen::VectorXd out(num_trainable(p));
  Eigen::Index at = 0;
  for_each_block(p, [&](const char*, const double* d, Eigen::Index size, bool) {
    out.segment(at, size) = Eigen::Map<const Eigen::VectorXd>(d, size);
    at += size;
  });
  return out;
}

inline void unpack(StudentParams& p, const Eigen::VectorXd& v) {
  if (v.size() != num_trainable(p)) throw InvariantError("unpack: size mismatch");
  Eigen::Index at = 0;
  for_each_block(p, [&](const char*, double* d, Eigen::Index size, bool) {
    Eigen::Map<Eigen::VectorXd>(d, size) = v.segment(at, size);
    at += size;
  });
}

/// 1 for blocks that receive weight decay, 0 otherwise.
inline Eigen::VectorXd decay_mask(const StudentParams& p) {
  Eigen::VectorXd out(num_trainable(p));
  Eigen::Index at = 0;
  for_each_block(p, [&](const char*, const double*, Eigen::Index size, bool decayed) {
    out.segment(at, size).setConstant(decayed ? 1.0 : 0.0);
    at += size;
  });
  return out;
}

inline bool same_shape(const StudentParams& a, const StudentParams& b) {
  return a.projector.rows() == b.projector.rows() && a.projector.cols() == b.projector.cols() &&
         a.regressor.rows() == b.regressor.rows() && a.regressor.cols() == b.regressor.cols() &&
         a.head.background == b.head.background && a.learn_temperature == b.learn_temperature &&
         a.head.background_vec.size() == b.head.background_vec.size() && a.head.text.rows() == b.head.text.rows();
}

inline bool all_finite(const StudentParams& p) { return pack(p).allFinite(); }

inline void check_feature(const StudentParams& p, const Eigen::VectorXd& x) {
  if (x.size() != p.feature_dim()) throw InvariantError("feature dimension mismatch");
}

/// Cosine scores of the projected feature; all zero when the projection
/// vanishes.
inline Eigen::VectorXd region_scores(const StudentParams& p, const Eigen::VectorXd& x) {
  check_feature(p, x);
  const Eigen::VectorXd v = p.projector * x;
  if (v.norm() < 1e-12) return Eigen::VectorXd::Zero(p.num_categories() + 1);
  return similarity(v, p.head);
}

inline Eigen::VectorXd region_probs(const StudentParams& p, const Eigen::VectorXd& x) {
  return predict_probs(region_scores(p, x));
}

inline Eigen::VectorXd region_deltas(const StudentParams& p, const Eigen::VectorXd& x) {
  check_feature(p, x);
  return p.regressor * x + p.reg_bias;
}

template <typename Box>
struct ForwardResult {
  Eigen::VectorXd scores;
  Box box{};
};

template <typename Box>
ForwardResult<Box> forward(const StudentParams& p, const Eigen::VectorXd& x, const Box& box) {
  if (p.regressor.rows() != static_cast<Eigen::Index>(BoxTraits<Box>::kDim))
    throw InvariantError("regressor output does not match the box kind");
  const Eigen::VectorXd d = region_deltas(p, x);
  return {region_scores(p, x), apply_deltas(box, std::span<const double>(d.data(), static_cast<std::size_t>(d.size())))};
}

}  // namespace ovst
