// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ovst/annotations/vocabulary.hpp"
#include "ovst/core/error.hpp"
#include "ovst/core/rng.hpp"
#include "ovst/core/text.hpp"

namespace ovst {

enum class PromptTemplate {
  kBare,       // "[category]"
  kArticle,    // "a [category]"
  kSatellite,  // "a satellite photo of [category]"
  kPhoto,      // "a photo of [category]"
};

inline std::string apply_template(PromptTemplate t, std::string_view category) {
  if (category.empty()) throw InvariantError("prompt template: empty category name");
  switch (t) {
    case PromptTemplate::kBare: return std::string(category);
    case PromptTemplate::kArticle: return "a " + std::string(category);
    case PromptTemplate::kSatellite: return "a satellite photo of " + std::string(category);
    case PromptTemplate::kPhoto: return "a photo of " + std::string(category);
  }
  throw InvariantError("unknown prompt template");
}

/// Accepts "t1".."t4" or the words bare/article/satellite/photo.
inline PromptTemplate parse_template(std::string_view s) {
  if (s == "t1" || s == "bare") return PromptTemplate::kBare;
  if (s == "t2" || s == "article") return PromptTemplate::kArticle;
  if (s == "t3" || s == "satellite") return PromptTemplate::kSatellite;
  if (s == "t4" || s == "photo") return PromptTemplate::kPhoto;
  throw ConfigError("unknown prompt template '" + std::string(s) + "'");
}

inline std::string template_name(PromptTemplate t) {
  switch (t) {
    case PromptTemplate::kBare: return "t1";
    case PromptTemplate::kArticle: return "t2";
    case PromptTemplate::kSatellite: return "t3";
    case PromptTemplate::kPhoto: return "t4";
  }
  return "?";
}

/// Text encoder stand-in: maps a string to a d-dimensional vector,
/// deterministically.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual Eigen::VectorXd embed(const std::string& text) const = 0;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seeded hash of the prompt text driving a Gaussian draw.
class SyntheticEmbeddingProvider final : public EmbeddingProvider {
 public:
  SyntheticEmbeddingProvider(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
  }
  std::size_t dim() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& text) const override {
    Rng rng(derive_seed(seed_, {fnv1a64(text)}));
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct EmbeddingTable {
  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> vectors;
};

/// `dim=<d>` header, then `<name> <d floats>` per line in shortest
/// round-trip decimal form.
inline void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  if (table.names.size() != table.vectors.size()) throw InvariantError("embedding table size mismatch");
  const auto d = table.vectors.empty() ? 0 : table.vectors.front().size();
  out << "dim=" << d << '\n';
  for (std::size_t i = 0; i < table.names.size(); ++i) {
    if (table.vectors[i].size() != d) throw InvariantError("embedding table: ragged vectors");
    out << table.names[i];
    for (Eigen::Index k = 0; k < d; ++k) out << ' ' << format_double(table.vectors[i][k]);
    out << '\n';
  }
}

inline EmbeddingTable read_embeddings(std::istream& in) {
  EmbeddingTable t;
  std::string line;
  std::size_t lineno = 0;
  long long dim = -1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto s = trim(line);
    if (s.empty()) continue;
    if (dim < 0) {
      if (s.substr(0, 4) != "dim=") throw ParseError(lineno, "expected 'dim=<d>' header");
      const auto d = parse_int(s.substr(4));
      if (!d || *d <= 0) throw ParseError(lineno, "bad dimension");
      dim = *d;
      continue;
    }
    const auto tok = split_whitespace(s);
    if (static_cast<long long>(tok.size()) != dim + 1) throw ParseError(lineno, "expected name and " + std::to_string(dim) + " values");
    Eigen::VectorXd v(dim);
    for (long long k = 0; k < dim; ++k) {
      const auto x = parse_double(tok[static_cast<std::size_t>(k + 1)]);
      if (!x || !std::isfinite(*x)) throw ParseError(lineno, "bad value");
      v[k] = *x;
    }
    t.names.push_back(tok[0]);
    t.vectors.push_back(std::move(v));
  }
  if (dim < 0) throw ParseError(lineno, "missing 'dim=<d>' header");
  return t;
}

/// Serves vectors from an embeddings file. Each row is looked up by the
/// prompt its category produces under `tmpl`.
class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  FileEmbeddingProvider(const EmbeddingTable& table, PromptTemplate tmpl) {
    for (std::size_t i = 0; i < table.names.size(); ++i) {
      by_prompt_[apply_template(tmpl, table.names[i])] = table.vectors[i];
      dim_ = static_cast<std::size_t>(table.vectors[i].size());
    }
  }
  std::size_t dim() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& text) const override {
    const auto it = by_prompt_.find(text);
    if (it == by_prompt_.end()) throw ConfigError("no embedding for '" + text + "'");
    return it->second;
  }

 private:
  std::map<std::string, Eigen::VectorXd> by_prompt_;
  std::size_t dim_ = 0;
};

/// One unit-norm embedding per vocabulary category, rows in vocabulary order.
inline Eigen::MatrixXd build_embeddings(const EmbeddingProvider& provider, const Vocabulary& vocab,
                                        PromptTemplate tmpl = PromptTemplate::kPhoto) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(provider.dim()));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto& name = vocab.name(static_cast<int>(i));
    Eigen::VectorXd v;
    try {
      v = provider.embed(apply_template(tmpl, name));
    } catch (const std::exception& e) {
      throw ConfigError("embedding provider failed for category '" + name + "': " + e.what());
    }
    const double n = v.norm();
    if (v.size() != out.cols() || !std::isfinite(n) || n <= 0.0)
      throw ConfigError("embedding provider returned an unusable vector for '" + name + "'");
    out.row(static_cast<Eigen::Index>(i)) = v.transpose() / n;
  }
  return out;
}

}  // namespace ovst
