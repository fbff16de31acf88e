// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ovst {

/// Bad user input: malformed files, invalid configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition or internal invariant failed at runtime.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed text input, carrying the offending 1-based line number.
class ParseError : public ConfigError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ConfigError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvariantError(what);
}

}  // namespace ovst
