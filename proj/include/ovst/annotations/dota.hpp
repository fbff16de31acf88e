// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ovst/annotations/dataset.hpp"
#include "ovst/core/text.hpp"
#include "ovst/geometry/polygon.hpp"

namespace ovst {

enum class UnknownCategory { kSkip, kFail };

struct UnknownCategoryReport {
  std::size_t line = 0;
  std::string name;
};

struct DotaParseResult {
  std::vector<Instance<OBox>> instances;
  std::vector<UnknownCategoryReport> unknown;
};

/// Reads DOTA text: `x1 y1 x2 y2 x3 y3 x4 y4 category difficult` per line.
/// Header lines such as `imagesource:GoogleEarth` or `gsd:0.146` are skipped.
inline DotaParseResult parse_dota(std::istream& in, const Vocabulary& vocab,
                                  UnknownCategory policy = UnknownCategory::kSkip) {
  DotaParseResult out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto tok = split_whitespace(t);
    if (tok.front().find(':') != std::string::npos) continue;
    if (tok.size() != 10) throw ParseError(lineno, "expected 8 coordinates, a category and a difficulty flag");
    std::array<Point, 4> quad;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto x = parse_double(tok[2 * i]), y = parse_double(tok[2 * i + 1]);
      if (!x || !y || !std::isfinite(*x) || !std::isfinite(*y)) throw ParseError(lineno, "bad coordinate");
      quad[i] = {*x, *y};
    }
    const auto& name = tok[8];
    if (tok[9] != "0" && tok[9] != "1") throw ParseError(lineno, "difficulty flag must be 0 or 1");
    const auto cat = vocab.find(name);
    if (!cat) {
      if (policy == UnknownCategory::kFail) throw ParseError(lineno, "unknown category '" + name + "'");
      out.unknown.push_back({lineno, name});
      continue;
    }
    if (polygon_area(quad) < kMinBoxArea) throw ParseError(lineno, "degenerate quadrilateral");
    out.instances.push_back({min_area_rect(quad), *cat, tok[9] == "1"});
  }
  return out;
}

inline void write_dota(std::ostream& out, const std::vector<Instance<OBox>>& instances, const Vocabulary& vocab) {
  for (const auto& inst : instances) {
    for (const Point p : obox_to_quad(inst.box)) out << format_double(p.x) << ' ' << format_double(p.y) << ' ';
    out << vocab.name(inst.category_id) << ' ' << (inst.difficult ? 1 : 0) << '\n';
  }
}

}  // namespace ovst
