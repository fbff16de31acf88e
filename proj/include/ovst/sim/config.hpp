// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "ovst/classifier/embedding.hpp"
#include "ovst/classifier/head.hpp"
#include "ovst/core/error.hpp"
#include "ovst/model/consistency.hpp"
#include "ovst/model/optim.hpp"
#include "ovst/selection/selection.hpp"
#include "ovst/sim/world.hpp"

namespace ovst {

struct TrainConfig {
  double alpha = 1.0;  // supervised flow
  double beta = 2.0;   // localization-teacher flow
  double gamma = 1.0;  // queue flow
  double ema_momentum = 0.999;
  SgdConfig sgd;
  double rpn_thresh = 0.95;
  double p0 = 0.8;
  double pseudo_nms = 0.5;
  double fg_iou = 0.5;
  int iterations = 1500;
  int labeled_batch = 6;
  int unlabeled_batch = 4;
  int queue_batch = 2;
  double burn_in_fraction = 0.1;
  bool external_teacher = true;
  bool queue_regression = false;
  BackgroundMode background = BackgroundMode::kLearnable;
  double temperature = kDefaultTemperature;
  bool learn_temperature = true;
  Augmentation augmentation;
  double label_fraction = 1.0;
  std::size_t queue_max_size = 0;
  int eval_interval = 20;
  DetectConfig detect;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  int burn_in() const { return static_cast<int>(std::ceil(burn_in_fraction * iterations)); }

  void validate() const {
    auto need = [](bool c, const char* what) {
      if (!c) throw ConfigError(std::string("train: ") + what);
    };
    need(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "loss weights must be >= 0");
    need(ema_momentum >= 0.0 && ema_momentum < 1.0, "ema_momentum must lie in [0, 1)");
    sgd.validate();
    need(rpn_thresh >= 0.0 && rpn_thresh <= 1.0 && p0 >= 0.0 && p0 <= 1.0, "thresholds must lie in [0, 1]");
    need(iterations > 0, "iterations must be positive");
    need(labeled_batch > 0 && unlabeled_batch >= 0 && queue_batch >= 0, "bad batch sizes");
    need(burn_in_fraction >= 0.0 && burn_in_fraction <= 1.0, "burn_in_fraction must lie in [0, 1]");
    need(temperature > 0.0, "temperature must be positive");
    need(label_fraction > 0.0 && label_fraction <= 1.0, "label_fraction must lie in (0, 1]");
    need(eval_interval > 0, "eval_interval must be positive");
    need(threads >= 1, "threads must be >= 1");
    augmentation.validate();
  }
};

struct ExperimentConfig {
  std::string box = "hbox";
  WorldConfig world;
  TrainConfig train;
  SelectionConfig regression_selection;  // filters pseudo boxes used as regression targets
  SelectionConfig queue_selection;       // picks pseudo boxes sent to the external teacher

  ExperimentConfig() {
    regression_selection.keep = KeepRule::kThreshold;
    regression_selection.threshold = 0.05;
    queue_selection.keep = KeepRule::kTopK;
    queue_selection.top_k = 8;
  }

  void validate() const {
    if (box != "hbox" && box != "obox") throw ConfigError("box must be 'hbox' or 'obox'");
    world.validate();
    train.validate();
    regression_selection.validate();
    queue_selection.validate();
  }
};

namespace detail {

class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError(section_ + ": expected an object");
  }
  ~JsonReader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(section_ + ": unknown key '" + it.key() + "'");
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(section_ + "." + key + ": wrong type");
    }
  }
  template <typename T, typename Parse>
  void get_as(const char* key, T& out, Parse parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(section_ + "." + key + ": expected a string");
    out = parse(j_.at(key).get<std::string>());
  }
  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  const std::string& section() const { return section_; }

 private:
  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

inline void read_selection(const nlohmann::json& j, const std::string& name, SelectionConfig& s) {
  JsonReader r(j, name);
  r.get("jitter_count", s.jitter_count);
  r.get("jitter", s.jitter);
  r.get("angle_jitter", s.angle_jitter);
  r.get_as("strategy", s.strategy, parse_strategy);
  r.get_as("keep", s.keep, [](const std::string& v) {
    if (v == "top_k") return KeepRule::kTopK;
    if (v == "threshold") return KeepRule::kThreshold;
    throw ConfigError("keep must be 'top_k' or 'threshold'");
  });
  r.get("top_k", s.top_k);
  r.get("threshold", s.threshold);
  r.get("angle_threshold", s.angle_threshold);
  r.get_as("angle_transform", s.angle_transform, parse_angle_transform);
  r.get("normalized_rjv", s.normalized_rjv);
  r.get("seed", s.seed);
}

inline nlohmann::json selection_json(const SelectionConfig& s) {
  return {{"jitter_count", s.jitter_count},
          {"jitter", s.jitter},
          {"angle_jitter", s.angle_jitter},
          {"strategy", strategy_name(s.strategy)},
          {"keep", s.keep == KeepRule::kTopK ? "top_k" : "threshold"},
          {"top_k", s.top_k},
          {"threshold", s.threshold},
          {"angle_threshold", s.angle_threshold},
          {"angle_transform", angle_transform_name(s.angle_transform)},
          {"normalized_rjv", s.normalized_rjv},
          {"seed", s.seed}};
}

}  // namespace detail

/// Reads a JSON config with optional sections `world`, `train`,
/// `selection.regression` and `selection.queue`; absent keys keep their
/// defaults and unknown keys are rejected. For oriented boxes an
/// unspecified strategy defaults to SJV.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::JsonReader top(j, "config");
  top.get("box", c.box);
  if (c.box == "obox") c.regression_selection.strategy = c.queue_selection.strategy = Strategy::kSjv;
  if (const auto* w = top.child("world")) {
    detail::JsonReader r(*w, "world");
    auto& x = c.world;
    r.get("semantic_dim", x.semantic_dim);
    r.get("embedding_dim", x.embedding_dim);
    r.get("num_base", x.num_base);
    r.get("num_novel", x.num_novel);
    r.get("class_separation", x.class_separation);
    r.get("feature_std", x.feature_std);
    r.get("scene_size", x.scene_size);
    r.get("min_object_size", x.min_object_size);
    r.get("max_object_size", x.max_object_size);
    r.get("min_objects", x.min_objects);
    r.get("max_objects", x.max_objects);
    r.get("novel_fraction", x.novel_fraction);
    r.get("num_labeled", x.num_labeled);
    r.get("num_unlabeled", x.num_unlabeled);
    r.get("num_test", x.num_test);
    r.get("proposals_per_object", x.proposals_per_object);
    r.get("background_proposals", x.background_proposals);
    r.get("proposal_noise", x.proposal_noise);
    r.get("novel_noise_scale", x.novel_noise_scale);
    r.get("geometry_noise", x.geometry_noise);
    r.get("blend_low", x.blend_low);
    r.get("blend_high", x.blend_high);
    r.get("rpn_center", x.rpn_center);
    r.get("rpn_slope", x.rpn_slope);
    r.get("novel_rpn_shift", x.novel_rpn_shift);
    r.get("external_noise", x.external_noise);
    r.get("external_temperature", x.external_temperature);
    r.get("external_low", x.external_low);
    r.get("external_high", x.external_high);
    r.get_as("prompt", x.prompt, [](const std::string& s) { return parse_template(s); });
    r.get("embeddings_file", x.embeddings_file);
    r.get("seed", x.seed);
  }
  if (const auto* t = top.child("train")) {
    detail::JsonReader r(*t, "train");
    auto& x = c.train;
    r.get("alpha", x.alpha);
    r.get("beta", x.beta);
    r.get("gamma", x.gamma);
    r.get("ema_momentum", x.ema_momentum);
    r.get("lr", x.sgd.lr);
    r.get("momentum", x.sgd.momentum);
    r.get("weight_decay", x.sgd.weight_decay);
    r.get("rpn_thresh", x.rpn_thresh);
    r.get("p0", x.p0);
    r.get("pseudo_nms", x.pseudo_nms);
    r.get("fg_iou", x.fg_iou);
    r.get("iterations", x.iterations);
    r.get("labeled_batch", x.labeled_batch);
    r.get("unlabeled_batch", x.unlabeled_batch);
    r.get("queue_batch", x.queue_batch);
    r.get("burn_in_fraction", x.burn_in_fraction);
    r.get("external_teacher", x.external_teacher);
    r.get("queue_regression", x.queue_regression);
    r.get_as("background", x.background, parse_background_mode);
    r.get("temperature", x.temperature);
    r.get("learn_temperature", x.learn_temperature);
    r.get("weak_noise", x.augmentation.weak_noise);
    r.get("weak_box_jitter", x.augmentation.weak_box_jitter);
    r.get("strong_noise", x.augmentation.strong_noise);
    r.get("strong_mask", x.augmentation.strong_mask);
    r.get("label_fraction", x.label_fraction);
    r.get("queue_max_size", x.queue_max_size);
    r.get("eval_interval", x.eval_interval);
    r.get("detect_fg_thresh", x.detect.fg_thresh);
    r.get("detect_nms", x.detect.nms_thresh);
    r.get("seed", x.seed);
    r.get("threads", x.threads);
  }
  if (const auto* s = top.child("selection")) {
    detail::JsonReader r(*s, "selection");
    if (const auto* q = r.child("regression")) detail::read_selection(*q, "selection.regression", c.regression_selection);
    if (const auto* q = r.child("queue")) detail::read_selection(*q, "selection.queue", c.queue_selection);
  }
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& w = c.world;
  const auto& t = c.train;
  nlohmann::json j;
  j["box"] = c.box;
  j["world"] = {{"semantic_dim", w.semantic_dim},
                {"embedding_dim", w.embedding_dim},
                {"num_base", w.num_base},
                {"num_novel", w.num_novel},
                {"class_separation", w.class_separation},
                {"feature_std", w.feature_std},
                {"scene_size", w.scene_size},
                {"min_object_size", w.min_object_size},
                {"max_object_size", w.max_object_size},
                {"min_objects", w.min_objects},
                {"max_objects", w.max_objects},
                {"novel_fraction", w.novel_fraction},
                {"num_labeled", w.num_labeled},
                {"num_unlabeled", w.num_unlabeled},
                {"num_test", w.num_test},
                {"proposals_per_object", w.proposals_per_object},
                {"background_proposals", w.background_proposals},
                {"proposal_noise", w.proposal_noise},
                {"novel_noise_scale", w.novel_noise_scale},
                {"geometry_noise", w.geometry_noise},
                {"blend_low", w.blend_low},
                {"blend_high", w.blend_high},
                {"rpn_center", w.rpn_center},
                {"rpn_slope", w.rpn_slope},
                {"novel_rpn_shift", w.novel_rpn_shift},
                {"external_noise", w.external_noise},
                {"external_temperature", w.external_temperature},
                {"external_low", w.external_low},
                {"external_high", w.external_high},
                {"prompt", template_name(w.prompt)},
                {"embeddings_file", w.embeddings_file},
                {"seed", w.seed}};
  j["train"] = {{"alpha", t.alpha},
                {"beta", t.beta},
                {"gamma", t.gamma},
                {"ema_momentum", t.ema_momentum},
                {"lr", t.sgd.lr},
                {"momentum", t.sgd.momentum},
                {"weight_decay", t.sgd.weight_decay},
                {"rpn_thresh", t.rpn_thresh},
                {"p0", t.p0},
                {"pseudo_nms", t.pseudo_nms},
                {"fg_iou", t.fg_iou},
                {"iterations", t.iterations},
                {"labeled_batch", t.labeled_batch},
                {"unlabeled_batch", t.unlabeled_batch},
                {"queue_batch", t.queue_batch},
                {"burn_in_fraction", t.burn_in_fraction},
                {"external_teacher", t.external_teacher},
                {"queue_regression", t.queue_regression},
                {"background", background_mode_name(t.background)},
                {"temperature", t.temperature},
                {"learn_temperature", t.learn_temperature},
                {"weak_noise", t.augmentation.weak_noise},
                {"weak_box_jitter", t.augmentation.weak_box_jitter},
                {"strong_noise", t.augmentation.strong_noise},
                {"strong_mask", t.augmentation.strong_mask},
                {"label_fraction", t.label_fraction},
                {"queue_max_size", t.queue_max_size},
                {"eval_interval", t.eval_interval},
                {"detect_fg_thresh", t.detect.fg_thresh},
                {"detect_nms", t.detect.nms_thresh},
                {"seed", t.seed},
                {"threads", t.threads}};
  j["selection"] = {{"regression", detail::selection_json(c.regression_selection)},
                    {"queue", detail::selection_json(c.queue_selection)}};
  return j;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace ovst
