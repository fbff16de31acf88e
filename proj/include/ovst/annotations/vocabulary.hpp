// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ovst/core/error.hpp"
#include "ovst/core/text.hpp"

namespace ovst {

/// Ordered category names split into disjoint base and novel sets.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> names, std::vector<bool> novel) : names_(std::move(names)), novel_(std::move(novel)) {
    if (names_.size() != novel_.size()) throw ConfigError("vocabulary: name/flag size mismatch");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty() || names_[i].find_first_of(" \t\r\n,") != std::string::npos)
        throw ConfigError("vocabulary: category names must be non-empty without whitespace or commas");
      for (std::size_t j = 0; j < i; ++j)
        if (names_[j] == names_[i]) throw ConfigError("vocabulary: duplicate category '" + names_[i] + "'");
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }
  bool is_novel(int id) const { return novel_.at(static_cast<std::size_t>(id)); }
  bool is_base(int id) const { return !is_novel(id); }
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < names_.size(); }

  std::optional<int> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }

  std::vector<int> base_ids() const { return ids_where(false); }
  std::vector<int> novel_ids() const { return ids_where(true); }

 private:
  std::vector<int> ids_where(bool novel) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (novel_[i] == novel) out.push_back(static_cast<int>(i));
    return out;
  }

  std::vector<std::string> names_;
  std::vector<bool> novel_;
};

/// One category per line; a trailing `*` marks a novel category. Blank
/// lines and lines starting with '#' are ignored.
inline Vocabulary read_vocabulary(std::istream& in) {
  std::vector<std::string> names;
  std::vector<bool> novel;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    bool is_novel = false;
    if (t.back() == '*') {
      is_novel = true;
      t = trim(t.substr(0, t.size() - 1));
    }
    if (t.empty()) throw ParseError(lineno, "empty category name");
    names.emplace_back(t);
    novel.push_back(is_novel);
  }
  return Vocabulary(std::move(names), std::move(novel));
}

inline void write_vocabulary(std::ostream& out, const Vocabulary& v) {
  for (std::size_t i = 0; i < v.size(); ++i)
    out << v.name(static_cast<int>(i)) << (v.is_novel(static_cast<int>(i)) ? "*" : "") << '\n';
}

}  // namespace ovst
