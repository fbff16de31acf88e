// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <Eigen/Dense>

#include "ovst/core/error.hpp"
#include "ovst/core/text.hpp"
#include "ovst/model/optim.hpp"
#include "ovst/model/student.hpp"

namespace ovst {

/// Everything needed to resume training: both networks, the optimizer
/// momentum and the iteration counter.
struct ModelCheckpoint {
  std::int64_t iteration = 0;
  StudentParams student;
  TeacherParams teacher;
  SgdState optimizer;
};

namespace detail {

inline void write_matrix(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
  out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << format_double(m(i, j));
    out << '\n';
  }
}

inline void write_params(std::ostream& out, const std::string& role, const StudentParams& p) {
  out << "params " << role << '\n';
  out << "background " << background_mode_name(p.head.background) << '\n';
  out << "learn_temperature " << (p.learn_temperature ? 1 : 0) << '\n';
  out << "log_tau " << format_double(p.head.log_tau) << '\n';
  write_matrix(out, "text", p.head.text);
  write_matrix(out, "background_vec", p.head.background_vec);
  write_matrix(out, "projector", p.projector);
  write_matrix(out, "regressor", p.regressor);
  write_matrix(out, "reg_bias", p.reg_bias);
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}
  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      auto t = split_whitespace(line);
      if (!t.empty()) return t;
    }
    throw ParseError(line_, "unexpected end of checkpoint");
  }
  std::vector<std::string> expect(const std::string& key, std::size_t n) {
    auto t = next();
    if (t.empty() || t[0] != key || t.size() != n + 1) fail("expected '" + key + "'");
    return t;
  }
  double number(const std::string& s) {
    const auto v = parse_double(s);
    if (!v) fail("bad number '" + s + "'");
    return *v;
  }
  long integer(const std::string& s) {
    const auto v = parse_int(s);
    if (!v || *v < 0) fail("bad integer '" + s + "'");
    return static_cast<long>(*v);
  }
  Eigen::MatrixXd matrix(const std::string& name) {
    const auto h = expect("matrix", 3);
    if (h[1] != name) fail("expected matrix " + name);
    const long r = integer(h[2]), c = integer(h[3]);
    Eigen::MatrixXd m(r, c);
    for (long i = 0; i < r; ++i) {
      const auto row = next();
      if (static_cast<long>(row.size()) != c) fail("matrix " + name + ": wrong row length");
      for (long j = 0; j < c; ++j) m(i, j) = number(row[static_cast<std::size_t>(j)]);
    }
    return m;
  }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, what); }

 private:
  std::istream& in_;
  std::size_t line_ = 0;
};

inline StudentParams read_params(LineReader& r, const std::string& role) {
  if (r.expect("params", 1)[1] != role) r.fail("expected params " + role);
  StudentParams p;
  p.head.background = parse_background_mode(r.expect("background", 1)[1]);
  p.learn_temperature = r.integer(r.expect("learn_temperature", 1)[1]) != 0;
  p.head.log_tau = r.number(r.expect("log_tau", 1)[1]);
  p.head.text = r.matrix("text");
  p.head.background_vec = r.matrix("background_vec");
  p.projector = r.matrix("projector");
  p.regressor = r.matrix("regressor");
  p.reg_bias = r.matrix("reg_bias");
  return p;
}

}  // namespace detail

inline void write_model_checkpoint(std::ostream& out, const ModelCheckpoint& c) {
  out << "ovst-model 1\n";
  out << "iteration " << c.iteration << '\n';
  detail::write_params(out, "student", c.student);
  detail::write_params(out, "teacher", c.teacher);
  detail::write_matrix(out, "velocity", c.optimizer.velocity);
  out << "end\n";
}

inline ModelCheckpoint read_model_checkpoint(std::istream& in) {
  detail::LineReader r(in);
  const auto head = r.next();
  if (head.size() != 2 || head[0] != "ovst-model" || head[1] != "1") r.fail("not an ovst-model v1 checkpoint");
  ModelCheckpoint c;
  const auto it = parse_int(r.expect("iteration", 1)[1]);
  if (!it) r.fail("bad iteration");
  c.iteration = *it;
  c.student = detail::read_params(r, "student");
  c.teacher = detail::read_params(r, "teacher");
  Eigen::MatrixXd v = r.matrix("velocity");
  if (v.size() != 0 && v.cols() != 1) r.fail("velocity must be a column");
  c.optimizer.velocity = v;
  r.expect("end", 0);
  if (!same_shape(c.student, c.teacher)) r.fail("teacher and student shapes differ");
  if (c.student.regressor.rows() != c.student.reg_bias.size()) r.fail("regressor and bias disagree");
  if (c.student.projector.rows() != c.student.head.text.cols()) r.fail("projector and embeddings disagree");
  if (c.optimizer.velocity.size() != 0 && c.optimizer.velocity.size() != num_trainable(c.student))
    r.fail("optimizer state size mismatch");
  return c;
}

/// Writes via a temporary file and rename.
inline void save_model_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& c) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write " + tmp);
    write_model_checkpoint(out, c);
    if (!out) throw ConfigError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline ModelCheckpoint load_model_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read_model_checkpoint(in);
}

}  // namespace ovst
