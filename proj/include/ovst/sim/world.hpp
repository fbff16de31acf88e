// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "ovst/annotations/dataset.hpp"
#include "ovst/annotations/vocabulary.hpp"
#include "ovst/classifier/embedding.hpp"
#include "ovst/classifier/head.hpp"
#include "ovst/core/error.hpp"
#include "ovst/core/rng.hpp"
#include "ovst/geometry/iou.hpp"
#include "ovst/model/box_coder.hpp"
#include "ovst/model/consistency.hpp"
#include "ovst/selection/selection.hpp"

namespace ovst {

struct WorldConfig {
  int semantic_dim = 24;   // appearance part of a region feature
  int embedding_dim = 16;  // text embedding width
  int num_base = 6;
  int num_novel = 4;
  double class_separation = 8.0;  // smallest distance between class means, in feature stds
  double feature_std = 1.0;
  double scene_size = 512.0;
  double min_object_size = 24.0;
  double max_object_size = 64.0;
  int min_objects = 3;
  int max_objects = 6;
  double novel_fraction = 0.4;  // chance that an object belongs to a novel class
  int num_labeled = 60;
  int num_unlabeled = 120;
  int num_test = 100;
  int proposals_per_object = 6;
  int background_proposals = 10;
  double proposal_noise = 0.12;     // relative box perturbation
  double novel_noise_scale = 1.6;   // extra perturbation for novel objects
  double geometry_noise = 0.03;     // noise on the box-offset part of the feature
  double blend_low = 0.3;           // IoU at which a region looks like background
  double blend_high = 0.6;          // IoU from which it looks like its object
  double rpn_center = 0.55;
  double rpn_slope = 15.0;
  double novel_rpn_shift = 0.05;    // objectness penalty for novel objects
  double external_noise = 0.1;
  double external_temperature = 0.01;
  double external_low = 0.5;        // crop IoU where the external view is pure background
  double external_high = 0.75;      // crop IoU where it is purely the object
  PromptTemplate prompt = PromptTemplate::kSatellite;
  std::string embeddings_file;      // empty: hashed synthetic embeddings
  std::uint64_t seed = 7;

  void validate() const {
    auto need = [](bool c, const char* what) {
      if (!c) throw ConfigError(std::string("world: ") + what);
    };
    need(semantic_dim > 0 && embedding_dim > 0, "dimensions must be positive");
    need(num_base > 0 && num_novel >= 0, "need at least one base category");
    need(num_base + num_novel <= 64, "at most 64 categories");
    need(class_separation > 0.0, "class_separation must be positive");
    need(feature_std > 0.0, "feature_std must be positive");
    need(min_object_size > 1.0 && max_object_size >= min_object_size, "bad object size range");
    need(scene_size > 3.0 * max_object_size, "scene too small for its objects");
    need(min_objects >= 1 && max_objects >= min_objects, "bad objects-per-image range");
    need(novel_fraction >= 0.0 && novel_fraction <= 1.0, "novel_fraction must lie in [0, 1]");
    need(num_labeled > 0 && num_unlabeled >= 0 && num_test > 0, "bad split sizes");
    need(proposals_per_object >= 1 && background_proposals >= 0, "bad proposal counts");
    need(proposal_noise >= 0.0 && novel_noise_scale > 0.0 && geometry_noise >= 0.0, "bad proposal noise");
    need(blend_high > blend_low, "blend_high must exceed blend_low");
    need(external_high > external_low, "external_high must exceed external_low");
    need(rpn_slope > 0.0 && external_temperature > 0.0 && external_noise >= 0.0, "bad oracle parameters");
  }
};

/// A generated world: the dataset seen by training, a held-out test split,
/// the full truth of every image and the latent class geometry.
template <typename Box>
struct World {
  WorldConfig config;
  Dataset<Box> dataset;                     // labeled (base only), unlabeled (empty), hidden
  std::vector<ImageRecord<Box>> test;       // full annotations
  std::map<std::int64_t, std::vector<Instance<Box>>> truth;  // every object of every image
  Eigen::MatrixXd class_means;              // C x semantic_dim
  Eigen::VectorXd background_mean;          // semantic_dim
  Eigen::MatrixXd text;                     // C x embedding_dim, unit rows
  ClassifierHead external;                  // crop classifier over `text` plus background

  Eigen::Index feature_dim() const {
    return config.semantic_dim + static_cast<Eigen::Index>(BoxTraits<Box>::kDim);
  }
  const std::vector<Instance<Box>>& objects(std::int64_t id) const {
    const auto it = truth.find(id);
    if (it == truth.end()) throw InvariantError("world: unknown image " + std::to_string(id));
    return it->second;
  }
};

inline const std::vector<std::string>& category_name_pool() {
  static const std::vector<std::string> names{
      "plane", "ship", "storage-tank", "baseball-diamond", "tennis-court", "basketball-court", "ground-track-field",
      "harbor", "bridge", "large-vehicle", "small-vehicle", "helicopter", "roundabout", "soccer-field",
      "swimming-pool", "container-crane", "airport", "helipad", "windmill", "dam", "chimney", "stadium",
      "overpass", "train-station", "golf-field", "expressway-toll", "parking-lot", "oil-well", "silo",
      "water-tower", "greenhouse", "solar-panel"};
  return names;
}

inline Vocabulary world_vocabulary(const WorldConfig& c) {
  std::vector<std::string> names;
  std::vector<bool> novel;
  const auto& pool = category_name_pool();
  for (int i = 0; i < c.num_base + c.num_novel; ++i) {
    const auto u = static_cast<std::size_t>(i);
    names.push_back(u < pool.size() ? pool[u] : "category-" + std::to_string(i));
    novel.push_back(i >= c.num_base);
  }
  return Vocabulary(names, novel);
}

/// Class and background means rescaled so the closest pair sits exactly
/// `class_separation` stds apart.
inline Eigen::MatrixXd separated_means(int count, int dim, double separation, double stddev, Rng& rng) {
  Eigen::MatrixXd m(count, dim);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = rng.normal();
  double closest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < count; ++i)
    for (int j = i + 1; j < count; ++j) closest = std::min(closest, (m.row(i) - m.row(j)).norm());
  if (std::isfinite(closest) && closest > 0.0) m *= separation * stddev / closest;
  return m;
}

namespace detail {

template <typename Box>
Box random_object(const WorldConfig& c, Rng& rng) {
  const double w = rng.uniform(c.min_object_size, c.max_object_size);
  const double h = rng.uniform(c.min_object_size, c.max_object_size);
  const double margin = c.max_object_size;
  const double cx = rng.uniform(margin, c.scene_size - margin), cy = rng.uniform(margin, c.scene_size - margin);
  if constexpr (std::is_same_v<Box, HBox>) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  } else {
    return {cx, cy, w, h, rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2)};
  }
}

template <typename Box>
std::vector<Instance<Box>> random_objects(const WorldConfig& c, Rng& rng) {
  const auto n = static_cast<std::size_t>(rng.range(c.min_objects, c.max_objects));
  std::vector<Instance<Box>> out;
  for (std::size_t k = 0, tries = 0; k < n && tries < 200; ++tries) {
    const Box b = random_object<Box>(c, rng);
    bool clear = true;
    for (const auto& o : out) clear = clear && iou(b, o.box) < 0.05;
    if (!clear) continue;
    const bool novel = c.num_novel > 0 && rng.uniform() < c.novel_fraction;
    const int cat = novel ? c.num_base + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_novel)))
                          : static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_base)));
    out.push_back({b, cat, false});
    ++k;
  }
  return out;
}

inline double smoothstep(double x, double lo, double hi) {
  const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

template <typename Box>
World<Box> generate_world(const WorldConfig& c) {
  c.validate();
  World<Box> w;
  w.config = c;
  const Vocabulary vocab = world_vocabulary(c);
  const int C = static_cast<int>(vocab.size());
  Rng geo(derive_seed(c.seed, {1}));
  const Eigen::MatrixXd means = separated_means(C + 1, c.semantic_dim, c.class_separation, c.feature_std, geo);
  w.class_means = means.topRows(C);
  w.background_mean = means.row(C).transpose();

  if (c.embeddings_file.empty()) {
    SyntheticEmbeddingProvider provider(static_cast<std::size_t>(c.embedding_dim), derive_seed(c.seed, {2}));
    w.text = build_embeddings(provider, vocab, c.prompt);
  } else {
    std::ifstream in(c.embeddings_file);
    if (!in) throw ConfigError("cannot open embeddings file " + c.embeddings_file);
    FileEmbeddingProvider provider(read_embeddings(in), c.prompt);
    w.text = build_embeddings(provider, vocab, c.prompt);
  }
  Rng ext(derive_seed(c.seed, {3}));
  w.external = make_head(w.text, BackgroundMode::kLearnable, ext.next_u64(), c.external_temperature);
  w.external.background_vec.normalize();

  w.dataset.vocabulary = vocab;
  std::int64_t next_id = 1;
  auto make_images = [&](int count, std::uint64_t split) {
    std::vector<ImageRecord<Box>> out;
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(c.seed, {4, split, static_cast<std::uint64_t>(i)}));
      ImageRecord<Box> r;
      r.image_id = next_id++;
      r.path = "synthetic/" + std::to_string(r.image_id) + ".png";
      r.width = r.height = static_cast<int>(c.scene_size);
      r.instances = detail::random_objects<Box>(c, rng);
      w.truth[r.image_id] = r.instances;
      out.push_back(std::move(r));
    }
    return out;
  };
  w.dataset.labeled = filter_base_annotations(make_images(c.num_labeled, 0), vocab);
  auto masked = mask_to_unlabeled(make_images(c.num_unlabeled, 1));
  w.dataset.unlabeled = std::move(masked.records);
  w.dataset.hidden = std::move(masked.hidden);
  w.test = make_images(c.num_test, 2);
  return w;
}

/// Best-overlapping object of a box and the IoU, or (-1, 0).
template <typename Box>
std::pair<int, double> best_object(const std::vector<Instance<Box>>& objs, const Box& b) {
  int best = -1;
  double q = 0.0;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const double v = iou(b, objs[i].box);
    if (v > q) q = v, best = static_cast<int>(i);
  }
  return {best, q};
}

/// Appearance blends from the background mean to the object's class mean
/// as the IoU rises; the trailing entries carry the offsets to the object.
template <typename Box>
Eigen::VectorXd region_feature(const World<Box>& w, const std::vector<Instance<Box>>& objs, const Box& b, Rng& rng) {
  const auto& c = w.config;
  const auto [k, q] = best_object(objs, b);
  Eigen::VectorXd x(w.feature_dim());
  const double lam = k >= 0 ? detail::smoothstep(q, c.blend_low, c.blend_high) : 0.0;
  Eigen::VectorXd mean = w.background_mean;
  if (k >= 0) mean = (1.0 - lam) * w.background_mean + lam * w.class_means.row(objs[static_cast<std::size_t>(k)].category_id).transpose();
  for (int i = 0; i < c.semantic_dim; ++i) x[i] = mean[i] + c.feature_std * rng.normal();
  constexpr auto kd = BoxTraits<Box>::kDim;
  Deltas<Box> d{};
  if (k >= 0 && q > 0.05) d = encode_deltas(b, objs[static_cast<std::size_t>(k)].box);
  for (std::size_t i = 0; i < kd; ++i)
    x[c.semantic_dim + static_cast<Eigen::Index>(i)] = d[i] + c.geometry_noise * rng.normal();
  return x;
}

/// Objectness of a box: a logistic in its best IoU, shifted for novel objects.
template <typename Box>
double rpn_score(const World<Box>& w, const std::vector<Instance<Box>>& objs, const Box& b) {
  const auto& c = w.config;
  const auto [k, q] = best_object(objs, b);
  if (k < 0) return 1.0 / (1.0 + std::exp(c.rpn_slope * c.rpn_center));
  const bool novel = w.dataset.vocabulary.is_novel(objs[static_cast<std::size_t>(k)].category_id);
  return 1.0 / (1.0 + std::exp(-c.rpn_slope * (q - c.rpn_center - (novel ? c.novel_rpn_shift : 0.0))));
}

template <typename Box>
Box perturb_box(const Box& b, double s, Rng& rng) {
  if constexpr (std::is_same_v<Box, HBox>) {
    const double w = b.width() * std::exp(s * rng.normal()), h = b.height() * std::exp(s * rng.normal());
    const double cx = b.cx() + s * b.width() * rng.normal(), cy = b.cy() + s * b.height() * rng.normal();
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  } else {
    return {b.cx + s * b.w * rng.normal(), b.cy + s * b.h * rng.normal(), b.w * std::exp(s * rng.normal()),
            b.h * std::exp(s * rng.normal()), wrap_half_pi(b.a + s * rng.normal())};
  }
}

/// Candidate regions of one image: perturbed copies of every object (more
/// perturbed for novel classes) plus random background boxes.
template <typename Box>
std::vector<Proposal<Box>> make_proposals(const World<Box>& w, const std::vector<Instance<Box>>& objs, Rng& rng) {
  const auto& c = w.config;
  std::vector<Proposal<Box>> out;
  for (const auto& o : objs) {
    const double s = c.proposal_noise * (w.dataset.vocabulary.is_novel(o.category_id) ? c.novel_noise_scale : 1.0);
    for (int j = 0; j < c.proposals_per_object; ++j) {
      const Box b = perturb_box(o.box, s, rng);
      out.push_back({b, Eigen::VectorXd(), 0.0});
    }
  }
  for (int j = 0; j < c.background_proposals; ++j) out.push_back({detail::random_object<Box>(c, rng), {}, 0.0});
  for (auto& p : out) {
    p.feature = region_feature(w, objs, p.box, rng);
    p.rpn_score = rpn_score(w, objs, p.box);
  }
  return out;
}

/// Class probabilities (plus trailing background) that the external
/// text-image model assigns to the crop of `b`.
template <typename Box>
Eigen::VectorXd external_probs(const World<Box>& w, const std::vector<Instance<Box>>& objs, const Box& b, Rng& rng) {
  const auto& c = w.config;
  const auto [k, q] = best_object(objs, b);
  const double mix = k >= 0 ? detail::smoothstep(q, c.external_low, c.external_high) : 0.0;
  Eigen::VectorXd e = (1.0 - mix) * w.external.background_vec;
  if (k >= 0) e += mix * w.text.row(objs[static_cast<std::size_t>(k)].category_id).transpose();
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] += c.external_noise * rng.normal() / std::sqrt(static_cast<double>(e.size()));
  if (e.norm() < 1e-12) e = w.external.background_vec;
  return predict_probs(similarity(e, w.external));
}

/// Regression oracle backed by a network: refine() re-describes the box
/// from the image and applies the network's regressor; objectness comes
/// from the world.
template <typename Box>
class NetworkOracle final : public RegressionOracle<Box> {
 public:
  NetworkOracle(const World<Box>& w, const std::vector<Instance<Box>>& objs, const StudentParams& net)
      : w_(w), objs_(objs), net_(net) {}
  Box refine(const Box& b, Rng& rng) const override {
    return forward(net_, region_feature(w_, objs_, b, rng), b).box;
  }
  double foreground_score(const Box& b) const override { return rpn_score(w_, objs_, b); }

 private:
  const World<Box>& w_;
  const std::vector<Instance<Box>>& objs_;
  const StudentParams& net_;
};

}  // namespace ovst
