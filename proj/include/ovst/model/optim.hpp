// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "ovst/core/error.hpp"
#include "ovst/model/student.hpp"

namespace ovst {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  }
};

struct SgdState {
  Eigen::VectorXd velocity;  // empty until the first step
};

/// Heavy-ball SGD with L2 decay folded into the gradient:
/// v = mu v + (g + wd theta), theta -= lr v. The temperature is not decayed.
inline void sgd_step(StudentParams& p, const Eigen::VectorXd& grad, SgdState& state, const SgdConfig& cfg) {
  Eigen::VectorXd theta = pack(p);
  if (grad.size() != theta.size()) throw InvariantError("sgd_step: gradient size mismatch");
  if (state.velocity.size() == 0) state.velocity = Eigen::VectorXd::Zero(theta.size());
  if (state.velocity.size() != theta.size()) throw InvariantError("sgd_step: optimizer state size mismatch");
  const Eigen::VectorXd g = grad + cfg.weight_decay * decay_mask(p).cwiseProduct(theta);
  state.velocity = cfg.momentum * state.velocity + g;
  theta -= cfg.lr * state.velocity;
  unpack(p, theta);
}

/// theta' = a theta' + (1 - a) theta over every trainable block.
inline void ema_update(TeacherParams& teacher, const StudentParams& student, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("EMA momentum must lie in [0, 1)");
  if (!same_shape(teacher, student)) throw InvariantError("ema_update: teacher and student shapes differ");
  unpack(teacher, alpha * pack(teacher) + (1.0 - alpha) * pack(student));
}

}  // namespace ovst
