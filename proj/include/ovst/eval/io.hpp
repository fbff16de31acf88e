// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovst/annotations/vocabulary.hpp"
#include "ovst/core/text.hpp"
#include "ovst/eval/evaluation.hpp"

namespace ovst {

template <typename Box>
std::string detection_csv_header() {
  std::string h = "image_id,category,score";
  for (const char* f : BoxTraits<Box>::kFields) h += std::string(",") + f;
  return h;
}

/// `image_id,category,score,<box fields>` with category names.
template <typename Box>
void write_detections_csv(std::ostream& out, std::span<const Detection<Box>> dets, const Vocabulary& vocab) {
  out << detection_csv_header<Box>() << '\n';
  for (const auto& d : dets) {
    out << d.image_id << ',' << vocab.name(d.category) << ',' << format_double(d.score);
    for (double v : BoxTraits<Box>::to_array(d.box)) out << ',' << format_double(v);
    out << '\n';
  }
}

/// Returns "hbox" or "obox" from a detections CSV header line.
inline std::string detect_box_kind(const std::string& header) {
  const auto cols = split_char(header, ',');
  if (cols.size() == 7 && cols[3] == "x1") return "hbox";
  if (cols.size() == 8 && cols[3] == "cx") return "obox";
  throw ConfigError("unrecognized detections header: " + header);
}

template <typename Box>
std::vector<Detection<Box>> read_detections_csv(std::istream& in, const Vocabulary& vocab) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<Detection<Box>> out;
  constexpr std::size_t k = BoxTraits<Box>::kDim;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (lineno == 1) {
      if (trim(line) != detection_csv_header<Box>()) throw ParseError(lineno, "expected header " + detection_csv_header<Box>());
      continue;
    }
    const auto cols = split_char(line, ',');
    if (cols.size() != 3 + k) throw ParseError(lineno, "wrong column count");
    Detection<Box> d;
    const auto id = parse_int(cols[0]);
    if (!id) throw ParseError(lineno, "bad image_id");
    d.image_id = *id;
    const auto cat = vocab.find(cols[1]);
    if (!cat) throw ParseError(lineno, "unknown category '" + cols[1] + "'");
    d.category = *cat;
    const auto score = parse_double(cols[2]);
    if (!score || !std::isfinite(*score)) throw ParseError(lineno, "bad score");
    d.score = *score;
    std::array<double, k> v;
    for (std::size_t i = 0; i < k; ++i) {
      const auto x = parse_double(cols[3 + i]);
      if (!x || !std::isfinite(*x)) throw ParseError(lineno, "bad box value");
      v[i] = *x;
    }
    d.box = BoxTraits<Box>::from_array(v);
    if (!d.box.valid()) throw ParseError(lineno, "invalid box");
    out.push_back(d);
  }
  return out;
}

inline nlohmann::json report_to_json(const EvalReport& r, const Vocabulary& vocab) {
  nlohmann::json j;
  j["iou_thresh"] = r.iou_thresh;
  j["mAP"] = r.map;
  j["mAP_base"] = r.map_base;
  j["mAP_novel"] = r.map_novel;
  j["mAR"] = r.mar;
  j["mAR_base"] = r.mar_base;
  j["mAR_novel"] = r.mar_novel;
  j["HM_AP"] = r.hm_ap;
  j["HM_AR"] = r.hm_ar;
  j["agnostic_recall_base"] = r.agnostic_recall_base;
  j["agnostic_recall_novel"] = r.agnostic_recall_novel;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : r.classes) {
    nlohmann::json cj{{"category", vocab.name(c.category)},
                      {"novel", vocab.is_novel(c.category)},
                      {"num_gt", c.num_gt},
                      {"num_det", c.num_det},
                      {"recall", c.recall}};
    cj["ap"] = c.ap ? nlohmann::json(*c.ap) : nlohmann::json(nullptr);
    j["classes"].push_back(std::move(cj));
  }
  return j;
}

/// Flat `metric,value` rows followed by per-class rows.
inline void write_report_csv(std::ostream& out, const EvalReport& r, const Vocabulary& vocab) {
  out << "metric,value\n";
  const std::pair<const char*, double> rows[] = {
      {"mAP", r.map},         {"mAP_base", r.map_base},   {"mAP_novel", r.map_novel},
      {"mAR", r.mar},         {"mAR_base", r.mar_base},   {"mAR_novel", r.mar_novel},
      {"HM_AP", r.hm_ap},     {"HM_AR", r.hm_ar},         {"agnostic_recall_base", r.agnostic_recall_base},
      {"agnostic_recall_novel", r.agnostic_recall_novel}};
  for (const auto& [k, v] : rows) out << k << ',' << format_double(v) << '\n';
  for (const auto& c : r.classes) {
    out << "AP[" << vocab.name(c.category) << "]," << (c.ap ? format_double(*c.ap) : std::string("nan")) << '\n';
    out << "AR[" << vocab.name(c.category) << "]," << format_double(c.recall) << '\n';
  }
}

/// One `pr_<category>.csv` per class with recall,precision,score rows.
inline void write_pr_curves(const std::filesystem::path& dir, const EvalReport& r, const Vocabulary& vocab) {
  std::filesystem::create_directories(dir);
  for (const auto& c : r.classes) {
    std::ofstream out(dir / ("pr_" + vocab.name(c.category) + ".csv"));
    if (!out) throw ConfigError("cannot write PR curve into " + dir.string());
    out << "recall,precision,score\n";
    for (const auto& p : c.curve)
      out << format_double(p.recall) << ',' << format_double(p.precision) << ',' << format_double(p.score) << '\n';
  }
}

}  // namespace ovst
