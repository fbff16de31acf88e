// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovst/core/error.hpp"
#include "ovst/core/text.hpp"
#include "ovst/sim/config.hpp"
#include "ovst/sim/training.hpp"
#include "ovst/sim/world.hpp"

namespace ovst {

/// Generates the world for `cfg`, trains, and writes outputs under
/// `out_dir` when given.
inline ExperimentLog run_experiment(const ExperimentConfig& cfg, const std::filesystem::path* out_dir = nullptr) {
  cfg.validate();
  auto go = [&](auto tag) {
    using Box = decltype(tag);
    const auto world = generate_world<Box>(cfg.world);
    auto r = run_training(world, cfg);
    if (out_dir) write_experiment(*out_dir, r, world.dataset.vocabulary, cfg);
    return std::move(r.log);
  };
  return cfg.box == "obox" ? go(OBox{}) : go(HBox{});
}

struct AblationCell {
  std::string label;
  nlohmann::json patch;  // merged into the base config
};

struct AblationRow {
  std::string label;
  EvalReport report;
  double novel_accuracy = 0.0;
};

inline ExperimentConfig apply_patch(const ExperimentConfig& base, const nlohmann::json& patch) {
  nlohmann::json j = config_to_json(base);
  j.merge_patch(patch);
  return config_from_json(j);
}

/// Named grids over one axis.
inline std::vector<AblationCell> builtin_grid(const std::string& name, const std::string& box = "hbox") {
  using nlohmann::json;
  std::vector<AblationCell> g;
  if (name == "loss_weights") {
    for (auto [a, b, c] : {std::tuple{1, 1, 1}, {2, 1, 1}, {1, 2, 1}, {1, 1, 2}})
      g.push_back({std::to_string(a) + "-" + std::to_string(b) + "-" + std::to_string(c),
                   json{{"train", {{"alpha", a}, {"beta", b}, {"gamma", c}}}}});
  } else if (name == "flows") {
    g.push_back({"S", json{{"train", {{"beta", 0.0}, {"external_teacher", false}}}}});
    g.push_back({"S+LT", json{{"train", {{"external_teacher", false}}}}});
    g.push_back({"S+LT+ET", json::object()});
  } else if (name == "background") {
    for (const char* m : {"zero", "mean", "learnable"}) g.push_back({m, json{{"train", {{"background", m}}}}});
  } else if (name == "template") {
    for (const char* t : {"t1", "t2", "t3", "t4"}) g.push_back({t, json{{"world", {{"prompt", t}}}}});
  } else if (name == "label_fraction") {
    for (double f : {0.34, 0.5, 1.0}) g.push_back({format_double(f), json{{"train", {{"label_fraction", f}}}}});
  } else if (name == "strategy") {
    const std::vector<std::string> s = box == "obox" ? std::vector<std::string>{"rpn", "sjv", "ajv", "ajv+sjv"}
                                                     : std::vector<std::string>{"rpn", "bjv", "rjv"};
    for (const auto& v : s) {
      json sel{{"strategy", v}, {"keep", "top_k"}, {"top_k", 4}};
      if (v == "rpn") sel["threshold"] = 0.0;
      g.push_back({v, json{{"selection", {{"regression", sel}}}}});
    }
  } else if (name == "angle_transform") {
    for (const char* f : {"identity", "sin"})
      g.push_back({f, json{{"selection", {{"regression", {{"strategy", "ajv"}, {"angle_transform", f}}}}}}});
  } else {
    throw ConfigError("unknown ablation grid '" + name + "'");
  }
  return g;
}

/// Grid file: {"cells": [{"label": ..., "patch": {...}}, ...]} or
/// {"grid": "<builtin name>"}.
inline std::vector<AblationCell> read_grid(const std::filesystem::path& path, const std::string& box) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("grid " + path.string() + ": " + e.what());
  }
  if (j.contains("grid")) return builtin_grid(j.at("grid").get<std::string>(), box);
  if (!j.contains("cells") || !j.at("cells").is_array()) throw ConfigError("grid: expected 'cells' array");
  std::vector<AblationCell> g;
  for (const auto& c : j.at("cells")) {
    if (!c.contains("label") || !c.at("label").is_string()) throw ConfigError("grid: every cell needs a label");
    g.push_back({c.at("label").get<std::string>(), c.value("patch", nlohmann::json::object())});
  }
  return g;
}

/// One run per cell with the base config's seeds.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& base, const std::vector<AblationCell>& grid,
                                             const std::filesystem::path* out_dir = nullptr) {
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  std::vector<AblationRow> rows;
  for (const auto& cell : grid) {
    const auto cfg = apply_patch(base, cell.patch);
    std::filesystem::path sub;
    if (out_dir) sub = *out_dir / cell.label;
    const auto log = run_experiment(cfg, out_dir ? &sub : nullptr);
    rows.push_back({cell.label, log.final_report, log.final_novel_accuracy});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "cell,mAP,mAP_base,mAP_novel,mAR,mAR_base,mAR_novel,HM_AP,HM_AR,agnostic_recall_base,"
         "agnostic_recall_novel,novel_accuracy\n";
  for (const auto& r : rows) {
    const auto& p = r.report;
    out << r.label;
    for (double v : {p.map, p.map_base, p.map_novel, p.mar, p.mar_base, p.mar_novel, p.hm_ap, p.hm_ar,
                     p.agnostic_recall_base, p.agnostic_recall_novel, r.novel_accuracy})
      out << ',' << format_double(v);
    out << '\n';
  }
}

}  // namespace ovst
