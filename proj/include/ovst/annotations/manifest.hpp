// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovst/annotations/dota.hpp"

namespace ovst {

/// One image entry of a dataset manifest. Relative annotation paths are
/// resolved against the manifest's directory.
struct ManifestEntry {
  std::int64_t id = 0;
  std::string path;
  int width = 0;
  int height = 0;
  std::string annotation;
};

/// Manifest JSON: {"images": [{"id", "path", "width", "height", "annotation"}]}.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open manifest " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + file.string() + ": " + e.what());
  }
  std::vector<ManifestEntry> out;
  try {
    for (const auto& e : j.at("images")) {
      ManifestEntry m;
      m.id = e.at("id").get<std::int64_t>();
      m.path = e.value("path", std::string{});
      m.width = e.at("width").get<int>();
      m.height = e.at("height").get<int>();
      m.annotation = e.value("annotation", std::string{});
      if (m.width <= 0 || m.height <= 0) throw ConfigError("manifest: image " + std::to_string(m.id) + " has bad size");
      for (const auto& prev : out)
        if (prev.id == m.id) throw ConfigError("manifest: duplicate image id " + std::to_string(m.id));
      out.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + file.string() + ": " + e.what());
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  for (const auto& m : entries)
    j["images"].push_back({{"id", m.id}, {"path", m.path}, {"width", m.width}, {"height", m.height},
                           {"annotation", m.annotation}});
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write manifest " + file.string());
  out << j.dump(2) << '\n';
}

/// Loads every manifest entry with its DOTA annotations, clamped to the image.
inline std::vector<ImageRecord<OBox>> load_dota_records(const std::filesystem::path& manifest, const Vocabulary& vocab,
                                                        UnknownCategory policy = UnknownCategory::kSkip) {
  std::vector<ImageRecord<OBox>> out;
  const auto base = manifest.parent_path();
  for (const auto& m : read_manifest(manifest)) {
    ImageRecord<OBox> r{m.id, m.path, m.width, m.height, {}};
    if (!m.annotation.empty()) {
      const auto ann = std::filesystem::path(m.annotation).is_absolute() ? std::filesystem::path(m.annotation)
                                                                         : base / m.annotation;
      std::ifstream in(ann);
      if (!in) throw ConfigError("cannot open annotation " + ann.string());
      try {
        r.instances = parse_dota(in, vocab, policy).instances;
      } catch (const ParseError& e) {
        throw ConfigError(ann.string() + ": " + e.what());
      }
    }
    out.push_back(clamp_instances(std::move(r)));
  }
  return out;
}

}  // namespace ovst
