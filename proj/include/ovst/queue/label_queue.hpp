// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovst/annotations/dataset.hpp"
#include "ovst/core/error.hpp"
#include "ovst/core/rng.hpp"
#include "ovst/eval/evaluation.hpp"
#include "ovst/eval/io.hpp"
#include "ovst/geometry/box.hpp"

namespace ovst {

template <typename Box>
struct PseudoLabel {
  Box box{};
  int category = 0;
  double confidence = 0.0;
};

template <typename Box>
struct QueueEntry {
  std::int64_t image_id = 0;
  std::string path;
  std::vector<PseudoLabel<Box>> labels;
  std::int64_t stamp = 0;
};

struct QueueOptions {
  /// Labels below this confidence are rejected on push.
  double min_confidence = 0.0;
  /// 0 keeps every image; otherwise the oldest stamp is evicted first.
  std::size_t max_size = 0;
  /// Per-category sampling weight; categories not listed weigh 1.
  std::map<int, double> category_weights;
};

/// Image-keyed pseudo-label store with a category -> image index. Index
/// lists are kept sorted by image id so the structure depends only on its
/// contents.
template <typename Box>
class DynamicLabelQueue {
 public:
  using Entry = QueueEntry<Box>;
  using Index = std::map<int, std::vector<std::int64_t>>;

  explicit DynamicLabelQueue(QueueOptions opts = {}) : opts_(std::move(opts)) {
    for (const auto& [c, w] : opts_.category_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("queue: category weights must be finite and >= 0");
  }

  const QueueOptions& options() const { return opts_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(std::int64_t id) const { return entries_.count(id) != 0; }
  const Entry& entry(std::int64_t id) const {
    const auto it = entries_.find(id);
    if (it == entries_.end()) throw InvariantError("queue: no entry for image " + std::to_string(id));
    return it->second;
  }
  const std::map<std::int64_t, Entry>& entries() const { return entries_; }
  const Index& index() const { return index_; }

  /// Replaces any entry with the same image id wholesale. An empty label
  /// set is not enqueued and leaves an existing entry untouched. Returns
  /// whether the queue changed.
  bool push_or_update(Entry e) {
    if (e.labels.empty()) return false;
    for (const auto& l : e.labels) {
      if (l.category < 0) throw InvariantError("queue: negative category id");
      if (!(l.confidence >= opts_.min_confidence && l.confidence <= 1.0))
        throw InvariantError("queue: label confidence outside [min_confidence, 1]");
      validate(l.box);
    }
    const auto it = entries_.find(e.image_id);
    if (it != entries_.end()) unindex(it->second);
    const std::int64_t id = e.image_id;
    auto& slot = entries_[id];
    slot = std::move(e);
    for (int c : categories_of(slot)) {
      auto& list = index_[c];
      list.insert(std::lower_bound(list.begin(), list.end(), id), id);
    }
    if (opts_.max_size > 0 && entries_.size() > opts_.max_size) evict_oldest();
    return true;
  }

  /// Two-stage draw with replacement: a category by weight, then a uniform
  /// image from that category's index list.
  std::vector<Entry> sample_batch(int n, Rng& rng) const {
    if (n <= 0) throw ConfigError("sample_batch: n must be positive");
    if (entries_.empty()) throw InvariantError("sample_batch: queue is empty");
    std::vector<int> cats;
    std::vector<double> cum;
    double total = 0.0;
    for (const auto& [c, list] : index_) {
      const auto w = opts_.category_weights.find(c);
      const double wt = w == opts_.category_weights.end() ? 1.0 : w->second;
      if (wt <= 0.0) continue;
      total += wt;
      cats.push_back(c);
      cum.push_back(total);
    }
    if (cats.empty()) throw InvariantError("sample_batch: every indexed category has zero weight");
    std::vector<Entry> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform() * total;
      std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      k = std::min(k, cats.size() - 1);
      const auto& list = index_.at(cats[k]);
      out.push_back(entries_.at(list[rng.below(list.size())]));
    }
    return out;
  }

  /// Per-category label counts.
  std::map<int, std::size_t> label_counts() const {
    std::map<int, std::size_t> out;
    for (const auto& [id, e] : entries_)
      for (const auto& l : e.labels) ++out[l.category];
    return out;
  }

  std::size_t num_labels() const {
    std::size_t n = 0;
    for (const auto& [id, e] : entries_) n += e.labels.size();
    return n;
  }

  /// Rebuilds the inverted index from the entries and compares.
  bool index_consistent() const {
    Index rebuilt;
    for (const auto& [id, e] : entries_)
      for (int c : categories_of(e)) rebuilt[c].push_back(id);
    return rebuilt == index_;
  }

  DynamicLabelQueue snapshot() const { return *this; }

 private:
  static std::vector<int> categories_of(const Entry& e) {
    std::vector<int> cats;
    for (const auto& l : e.labels) cats.push_back(l.category);
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    return cats;
  }

  void unindex(const Entry& e) {
    for (int c : categories_of(e)) {
      auto& list = index_[c];
      const auto pos = std::lower_bound(list.begin(), list.end(), e.image_id);
      if (pos == list.end() || *pos != e.image_id) throw InvariantError("queue: index out of sync");
      list.erase(pos);
      if (list.empty()) index_.erase(c);
    }
  }

  void evict_oldest() {
    auto victim = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it)
      if (it->second.stamp < victim->second.stamp) victim = it;
    unindex(victim->second);
    entries_.erase(victim);
  }

  QueueOptions opts_;
  std::map<std::int64_t, Entry> entries_;
  Index index_;
};

struct QueueQuality {
  double precision = 0.0;
  double recall = 0.0;
  double ap = 0.0;
  std::size_t num_labels = 0;
  std::size_t num_gt = 0;
};

/// Pseudo labels as detections, optionally restricted to `cats`.
template <typename Box>
std::vector<Detection<Box>> queue_detections(const DynamicLabelQueue<Box>& q, const std::vector<int>* cats = nullptr) {
  std::vector<Detection<Box>> out;
  for (const auto& [id, e] : q.entries())
    for (const auto& l : e.labels)
      if (!cats || std::find(cats->begin(), cats->end(), l.category) != cats->end())
        out.push_back({id, l.box, l.category, l.confidence});
  return out;
}

/// Scores the queue's labels of `cats` against ground truth at `iou_thresh`
/// with category-aware matching. Precision is 0 when there are no labels.
template <typename Box>
QueueQuality queue_quality(const DynamicLabelQueue<Box>& q, const GroundTruth<Box>& gts, const std::vector<int>& cats,
                           double iou_thresh = 0.5) {
  QueueQuality out;
  std::size_t tp = 0;
  std::vector<double> aps;
  for (int c : cats) {
    const std::vector<int> one{c};
    const auto dets = queue_detections(q, &one);
    const auto m = match_detections<Box>(dets, restrict_categories(gts, one), iou_thresh, false);
    out.num_labels += dets.size();
    out.num_gt += m.num_gt;
    for (auto s : m.status) tp += s == MatchStatus::kTruePositive;
    if (const auto ap = average_precision<Box>(m, dets)) aps.push_back(*ap);
  }
  out.precision = out.num_labels ? static_cast<double>(tp) / static_cast<double>(out.num_labels) : 0.0;
  out.recall = out.num_gt ? static_cast<double>(tp) / static_cast<double>(out.num_gt) : 0.0;
  for (double a : aps) out.ap += a / static_cast<double>(aps.size());
  return out;
}

template <typename Box>
void write_queue_checkpoint(std::ostream& out, const DynamicLabelQueue<Box>& q) {
  nlohmann::json head{{"format", "ovst-queue"}, {"version", 1}, {"box", BoxTraits<Box>::kName}};
  out << head.dump() << '\n';
  for (const auto& [id, e] : q.entries()) {
    nlohmann::json j{{"image_id", id}, {"path", e.path}, {"stamp", e.stamp}};
    j["labels"] = nlohmann::json::array();
    for (const auto& l : e.labels) {
      const auto a = BoxTraits<Box>::to_array(l.box);
      j["labels"].push_back({{"category", l.category}, {"confidence", l.confidence}, {"box", a}});
    }
    out << j.dump() << '\n';
  }
}

template <typename Box>
DynamicLabelQueue<Box> read_queue_checkpoint(std::istream& in, QueueOptions opts = {}) {
  DynamicLabelQueue<Box> q(std::move(opts));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    try {
      if (lineno == 1) {
        if (j.at("format") != "ovst-queue" || j.at("version") != 1) throw ParseError(lineno, "not a queue checkpoint");
        if (j.at("box") != BoxTraits<Box>::kName) throw ParseError(lineno, "box kind mismatch");
        continue;
      }
      QueueEntry<Box> e;
      e.image_id = j.at("image_id").get<std::int64_t>();
      e.path = j.at("path").get<std::string>();
      e.stamp = j.at("stamp").get<std::int64_t>();
      for (const auto& lj : j.at("labels")) {
        const auto a = lj.at("box").get<std::vector<double>>();
        if (a.size() != BoxTraits<Box>::kDim) throw ParseError(lineno, "wrong box arity");
        e.labels.push_back({BoxTraits<Box>::from_array(a), lj.at("category").get<int>(), lj.at("confidence").get<double>()});
      }
      q.push_or_update(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (lineno == 0) throw ParseError(0, "empty queue checkpoint");
  return q;
}

template <typename Box>
void write_queue_detections(std::ostream& out, const DynamicLabelQueue<Box>& q, const Vocabulary& vocab) {
  const auto dets = queue_detections(q);
  write_detections_csv<Box>(out, dets, vocab);
}

}  // namespace ovst
