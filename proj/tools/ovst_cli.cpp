// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 success, 2 bad configuration or
// input, 3 violated runtime invariant.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ovst/annotations/dota.hpp"
#include "ovst/annotations/manifest.hpp"
#include "ovst/classifier/embedding.hpp"
#include "ovst/eval/io.hpp"
#include "ovst/selection/synthetic_oracle.hpp"
#include "ovst/sim/ablation.hpp"

namespace fs = std::filesystem;
using namespace ovst;

namespace {

Vocabulary load_vocabulary(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open vocabulary " + p.string());
  return read_vocabulary(in);
}

std::ifstream open_input(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  return in;
}

template <typename Writer>
void write_output(const fs::path& p, Writer&& w) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  detail::write_file(p, std::forward<Writer>(w));
}

// ---- simulate ---------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, iterations;
  int stop_after = -1;
  std::string out_dir;
  std::string resume;
};

template <typename Box>
void simulate_box(const ExperimentConfig& cfg, const SimulateArgs& a) {
  const auto world = generate_world<Box>(cfg.world);
  std::optional<TrainingResult<Box>> prior;
  if (!a.resume.empty()) {
    const fs::path dir(a.resume);
    auto model = load_model_checkpoint(dir / "model.ckpt");
    auto qin = open_input(dir / "queue.jsonl");
    auto queue = read_queue_checkpoint<Box>(qin, QueueOptions{cfg.train.p0, cfg.train.queue_max_size, {}});
    prior.emplace(TrainingResult<Box>{{}, std::move(model), std::move(queue)});
  }
  const auto r = run_training(world, cfg, prior ? &*prior : nullptr, a.stop_after);
  write_experiment(a.out_dir, r, world.dataset.vocabulary, cfg);
  write_output(fs::path(a.out_dir) / "vocab.txt", [&](std::ostream& o) { write_vocabulary(o, world.dataset.vocabulary); });
  const auto& rep = r.log.final_report;
  std::cout << "mAP_base=" << format_double(rep.map_base) << " mAP_novel=" << format_double(rep.map_novel)
            << " recall_novel=" << format_double(rep.agnostic_recall_novel)
            << " novel_accuracy=" << format_double(r.log.final_novel_accuracy) << '\n';
}

void run_simulate(const SimulateArgs& a) {
  auto cfg = a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.threads) cfg.train.threads = *a.threads;
  if (a.iterations) cfg.train.iterations = *a.iterations;
  cfg.validate();
  fs::create_directories(a.out_dir);
  write_output(fs::path(a.out_dir) / "config.json",
               [&](std::ostream& o) { o << config_to_json(cfg).dump(2) << '\n'; });
  if (cfg.box == "obox")
    simulate_box<OBox>(cfg, a);
  else
    simulate_box<HBox>(cfg, a);
}

// ---- ablate -----------------------------------------------------------------

void run_ablate(const std::string& config, const std::string& grid, const std::string& out) {
  const auto base = config.empty() ? ExperimentConfig{} : load_config(config);
  const auto cells = fs::exists(grid) ? read_grid(grid, base.box) : builtin_grid(grid, base.box);
  const fs::path dir(out);
  const auto rows = run_ablation(base, cells, &dir);
  write_output(dir / "ablation.csv", [&](std::ostream& o) { write_ablation_csv(o, rows); });
  write_ablation_csv(std::cout, rows);
}

// ---- eval -------------------------------------------------------------------

template <typename Box>
void eval_box(std::istream& dets_in, const fs::path& manifest, const Vocabulary& vocab, double iou_thresh,
              const fs::path& out) {
  const auto dets = read_detections_csv<Box>(dets_in, vocab);
  GroundTruth<Box> gts;
  for (const auto& r : load_dota_records(manifest, vocab)) {
    auto& dst = gts[r.image_id];
    for (const auto& i : r.instances) dst.push_back({BoxTraits<Box>::from_obox(i.box), i.category_id, i.difficult});
  }
  const auto rep = evaluate<Box>(dets, gts, vocab, iou_thresh);
  fs::create_directories(out);
  write_output(out / "report.json", [&](std::ostream& o) { o << report_to_json(rep, vocab).dump(2) << '\n'; });
  write_output(out / "report.csv", [&](std::ostream& o) { write_report_csv(o, rep, vocab); });
  write_pr_curves(out / "pr", rep, vocab);
  std::cout << "mAP=" << format_double(rep.map) << " mAP_base=" << format_double(rep.map_base)
            << " mAP_novel=" << format_double(rep.map_novel) << " HM_AP=" << format_double(rep.hm_ap) << '\n';
}

void run_eval(const std::string& dets, const std::string& manifest, const std::string& vocab_path, double iou_thresh,
              const std::string& out) {
  const auto vocab = load_vocabulary(vocab_path);
  auto in = open_input(dets);
  std::string header;
  std::getline(in, header);
  const auto kind = detect_box_kind(std::string(trim(header)));
  in.clear();
  in.seekg(0);
  if (kind == "obox")
    eval_box<OBox>(in, manifest, vocab, iou_thresh, out);
  else
    eval_box<HBox>(in, manifest, vocab, iou_thresh, out);
}

// ---- select -----------------------------------------------------------------

// Refinement from a wrapped oracle; objectness from the input's rpn_score
// column so the RPN strategy ranks by the given scores.
template <typename Box>
class ColumnScoreOracle final : public RegressionOracle<Box> {
 public:
  ColumnScoreOracle(const RegressionOracle<Box>& inner, const std::vector<Candidate<Box>>& cands) : inner_(inner) {
    for (const auto& c : cands) scores_[BoxTraits<Box>::to_array(c.box)] = c.rpn_score;
  }
  Box refine(const Box& b, Rng& rng) const override { return inner_.refine(b, rng); }
  double foreground_score(const Box& b) const override {
    const auto it = scores_.find(BoxTraits<Box>::to_array(b));
    return it == scores_.end() ? inner_.foreground_score(b) : it->second;
  }

 private:
  const RegressionOracle<Box>& inner_;
  std::map<std::array<double, BoxTraits<Box>::kDim>, double> scores_;
};

template <typename Box>
std::map<std::int64_t, std::vector<Candidate<Box>>> read_candidates(std::istream& in, bool with_score,
                                                                    const std::string& what) {
  constexpr std::size_t k = BoxTraits<Box>::kDim;
  std::string expect = "image_id";
  for (const char* f : BoxTraits<Box>::kFields) expect += std::string(",") + f;
  if (with_score) expect += ",rpn_score";
  std::map<std::int64_t, std::vector<Candidate<Box>>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (lineno == 1) {
      if (trim(line) != expect) throw ParseError(lineno, what + ": expected header " + expect);
      continue;
    }
    const auto cols = split_char(trim(line), ',');
    if (cols.size() != 1 + k + (with_score ? 1 : 0)) throw ParseError(lineno, what + ": wrong column count");
    const auto id = parse_int(cols[0]);
    if (!id) throw ParseError(lineno, what + ": bad image_id");
    std::array<double, k> v;
    for (std::size_t i = 0; i < k; ++i) {
      const auto x = parse_double(cols[1 + i]);
      if (!x || !std::isfinite(*x)) throw ParseError(lineno, what + ": bad box value");
      v[i] = *x;
    }
    Candidate<Box> c{BoxTraits<Box>::from_array(v), 0.0};
    if (!c.box.valid()) throw ParseError(lineno, what + ": invalid box");
    if (with_score) {
      const auto s = parse_double(cols[1 + k]);
      if (!s || !std::isfinite(*s)) throw ParseError(lineno, what + ": bad rpn_score");
      c.rpn_score = *s;
    }
    out[*id].push_back(c);
  }
  return out;
}

struct SelectArgs {
  std::string input, output, truth;
  std::string box = "hbox";
  std::string strategy = "bjv";
  std::string oracle = "identity";
  std::string transform = "sin";
  std::optional<std::size_t> top_k;
  std::optional<double> threshold;
  double angle_threshold = 0.0;
  int jitter_count = 10;
  double jitter = 0.06, angle_jitter = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

template <typename Box>
void select_box(const SelectArgs& a) {
  SelectionConfig cfg;
  cfg.strategy = parse_strategy(a.strategy);
  cfg.angle_transform = parse_angle_transform(a.transform);
  cfg.jitter_count = a.jitter_count;
  cfg.jitter = a.jitter;
  cfg.angle_jitter = a.angle_jitter;
  cfg.threads = a.threads;
  if (a.top_k && a.threshold) throw ConfigError("select: give --top-k or --threshold, not both");
  if (a.threshold) {
    cfg.keep = KeepRule::kThreshold;
    cfg.threshold = *a.threshold;
    cfg.angle_threshold = a.angle_threshold;
  } else {
    cfg.top_k = a.top_k.value_or(cfg.top_k);
  }
  auto in = open_input(a.input);
  const auto groups = read_candidates<Box>(in, true, "candidates");
  std::map<std::int64_t, std::vector<Candidate<Box>>> truths;
  if (a.oracle == "noisy") {
    if (a.truth.empty()) throw ConfigError("select: --oracle noisy needs --truth");
    auto tin = open_input(a.truth);
    truths = read_candidates<Box>(tin, false, "truth");
  } else if (a.oracle != "identity") {
    throw ConfigError("select: unknown oracle '" + a.oracle + "'");
  }

  const bool paired = cfg.strategy == Strategy::kAjvSjv;
  write_output(a.output, [&](std::ostream& o) {
    o << "image_id";
    for (const char* f : BoxTraits<Box>::kFields) o << ',' << f;
    o << ",rpn_score,score" << (paired ? ",angle_score" : "") << ",keep\n";
    for (const auto& [id, cands] : groups) {
      IdentityOracle<Box> identity;
      std::vector<Box> tb;
      if (auto it = truths.find(id); it != truths.end())
        for (const auto& t : it->second) tb.push_back(t.box);
      IouNoiseOracle<Box> noisy(tb);
      const RegressionOracle<Box>& inner =
          a.oracle == "noisy" ? static_cast<const RegressionOracle<Box>&>(noisy) : identity;
      ColumnScoreOracle<Box> oracle(inner, cands);
      auto c = cfg;
      c.seed = derive_seed(a.seed, {static_cast<std::uint64_t>(id)});
      const auto r = select<Box>(cands, c, oracle);
      for (std::size_t i = 0; i < cands.size(); ++i) {
        o << id;
        for (double v : BoxTraits<Box>::to_array(cands[i].box)) o << ',' << format_double(v);
        o << ',' << format_double(cands[i].rpn_score) << ',' << format_double(r.scores[i]);
        if (paired) o << ',' << format_double(r.angle_scores[i]);
        o << ',' << (r.keep[i] ? 1 : 0) << '\n';
      }
    }
  });
}

void run_select(const SelectArgs& a) {
  if (a.box == "obox")
    select_box<OBox>(a);
  else if (a.box == "hbox")
    select_box<HBox>(a);
  else
    throw ConfigError("select: --box must be hbox or obox");
}

// ---- split / merge ----------------------------------------------------------

void run_split(const std::string& manifest, const std::string& vocab_path, const std::string& out, int size,
               int overlap) {
  const auto vocab = load_vocabulary(vocab_path);
  const fs::path dir(out);
  fs::create_directories(dir / "annotations");
  std::vector<ManifestEntry> entries;
  for (const auto& r : load_dota_records(manifest, vocab)) {
    for (const auto& p : split_record(r, size, overlap)) {
      const auto name = fs::path(p.path).filename().string();
      const auto ann = fs::path("annotations") / (name + ".txt");
      write_output(dir / ann, [&](std::ostream& o) { write_dota(o, p.instances, vocab); });
      entries.push_back({p.image_id, p.path, p.width, p.height, ann.string()});
    }
  }
  write_manifest(dir / "manifest.json", entries);
  std::cout << entries.size() << " patches\n";
}

template <typename Box>
void merge_box(std::istream& in, const std::vector<ManifestEntry>& images, const Vocabulary& vocab, int size,
               int overlap, double iou_thresh, const fs::path& out) {
  std::map<std::int64_t, const ManifestEntry*> by_id;
  for (const auto& m : images) by_id[m.id] = &m;
  std::map<std::int64_t, std::vector<PatchDetection<Box>>> per_image;
  for (auto d : read_detections_csv<Box>(in, vocab)) {
    const std::int64_t parent = d.image_id / 10000;
    const auto patch = static_cast<std::size_t>(d.image_id % 10000);
    if (d.image_id < 0 || !by_id.count(parent))
      throw ConfigError("merge: detection on unknown image " + std::to_string(d.image_id));
    d.image_id = parent;
    per_image[parent].push_back({patch, d});
  }
  std::vector<Detection<Box>> merged;
  for (const auto& [id, pds] : per_image) {
    const auto* m = by_id.at(id);
    const auto grid = split_patches(m->width, m->height, size, overlap);
    const auto part = remap_and_merge<Box>(pds, grid, iou_thresh);
    merged.insert(merged.end(), part.begin(), part.end());
  }
  write_output(out, [&](std::ostream& o) { write_detections_csv<Box>(o, merged, vocab); });
  std::cout << merged.size() << " detections\n";
}

void run_merge(const std::string& dets, const std::string& manifest, const std::string& vocab_path,
               const std::string& out, int size, int overlap, double iou_thresh) {
  const auto vocab = load_vocabulary(vocab_path);
  const auto images = read_manifest(manifest);
  auto in = open_input(dets);
  std::string header;
  std::getline(in, header);
  const auto kind = detect_box_kind(std::string(trim(header)));
  in.clear();
  in.seekg(0);
  if (kind == "obox")
    merge_box<OBox>(in, images, vocab, size, overlap, iou_thresh, out);
  else
    merge_box<HBox>(in, images, vocab, size, overlap, iou_thresh, out);
}

// ---- embed ------------------------------------------------------------------

void run_embed(const std::string& vocab_path, int dim, std::uint64_t seed, const std::string& tmpl,
               const std::string& out) {
  if (dim <= 0) throw ConfigError("embed: --dim must be positive");
  const auto vocab = load_vocabulary(vocab_path);
  const auto t = parse_template(tmpl);
  SyntheticEmbeddingProvider provider(static_cast<std::size_t>(dim), seed);
  EmbeddingTable table;
  for (const auto& name : vocab.names()) {
    table.names.push_back(name);
    table.vectors.push_back(provider.embed(apply_template(t, name)));
  }
  write_output(out, [&](std::ostream& o) { write_embeddings(o, table); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ovst: open-vocabulary self-training simulator and evaluation tools"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Train on a synthetic world and write logs");
  simulate->add_option("--config", sim.config, "JSON experiment config")->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "Training seed override");
  simulate->add_option("--threads", sim.threads, "Worker threads (results do not depend on it)");
  simulate->add_option("--iterations", sim.iterations, "Iteration count override");
  simulate->add_option("--out-dir", sim.out_dir, "Output directory")->required();
  simulate->add_option("--stop-after", sim.stop_after, "Checkpoint and stop after this many iterations");
  simulate->add_option("--resume", sim.resume, "Continue from a previous output directory")->check(CLI::ExistingDirectory);

  std::string ab_config, ab_grid, ab_out;
  auto* ablate = app.add_subcommand("ablate", "Run a grid of config variants");
  ablate->add_option("--config", ab_config, "Base JSON config")->check(CLI::ExistingFile);
  ablate->add_option("--grid", ab_grid,
                     "Grid file or built-in name: loss_weights, flows, background, template, label_fraction, "
                     "strategy, angle_transform")
      ->required();
  ablate->add_option("--out", ab_out, "Output directory")->required();

  std::string ev_dets, ev_manifest, ev_vocab, ev_out;
  double ev_iou = 0.5;
  auto* eval = app.add_subcommand("eval", "Score a detections CSV against DOTA annotations");
  eval->add_option("--detections", ev_dets)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--vocab", ev_vocab)->required()->check(CLI::ExistingFile);
  eval->add_option("--iou", ev_iou, "Match threshold")->capture_default_str();
  eval->add_option("--out", ev_out, "Output directory")->required();

  SelectArgs sel;
  auto* select_cmd = app.add_subcommand("select", "Score candidate boxes and flag the kept ones");
  select_cmd->add_option("--input", sel.input, "CSV: image_id,<box fields>,rpn_score")->required()->check(CLI::ExistingFile);
  select_cmd->add_option("--output", sel.output)->required();
  select_cmd->add_option("--box", sel.box, "hbox or obox")->capture_default_str();
  select_cmd->add_option("--strategy", sel.strategy, "rpn, bjv, rjv, sjv, ajv, ajv+sjv")->capture_default_str();
  select_cmd->add_option("--oracle", sel.oracle, "identity or noisy")->capture_default_str();
  select_cmd->add_option("--truth", sel.truth, "CSV of true boxes for the noisy oracle")->check(CLI::ExistingFile);
  select_cmd->add_option("--top-k", sel.top_k);
  select_cmd->add_option("--threshold", sel.threshold);
  select_cmd->add_option("--angle-threshold", sel.angle_threshold)->capture_default_str();
  select_cmd->add_option("--jitter-count", sel.jitter_count)->capture_default_str();
  select_cmd->add_option("--jitter", sel.jitter)->capture_default_str();
  select_cmd->add_option("--angle-jitter", sel.angle_jitter)->capture_default_str();
  select_cmd->add_option("--transform", sel.transform, "sin or identity")->capture_default_str();
  select_cmd->add_option("--seed", sel.seed)->capture_default_str();
  select_cmd->add_option("--threads", sel.threads)->capture_default_str();

  std::string sp_manifest, sp_vocab, sp_out;
  int patch_size = 1024, patch_overlap = 200;
  auto* split = app.add_subcommand("split", "Cut annotated images into overlapping patches");
  split->add_option("--manifest", sp_manifest)->required()->check(CLI::ExistingFile);
  split->add_option("--vocab", sp_vocab)->required()->check(CLI::ExistingFile);
  split->add_option("--out", sp_out, "Output directory")->required();
  split->add_option("--size", patch_size)->capture_default_str();
  split->add_option("--overlap", patch_overlap)->capture_default_str();

  std::string mg_dets, mg_manifest, mg_vocab, mg_out;
  double mg_iou = 0.5;
  auto* merge = app.add_subcommand("merge", "Map patch detections back to whole images");
  merge->add_option("--detections", mg_dets, "Detections on patch ids")->required()->check(CLI::ExistingFile);
  merge->add_option("--manifest", mg_manifest, "Manifest of the whole images")->required()->check(CLI::ExistingFile);
  merge->add_option("--vocab", mg_vocab)->required()->check(CLI::ExistingFile);
  merge->add_option("--out", mg_out, "Merged detections CSV")->required();
  merge->add_option("--size", patch_size)->capture_default_str();
  merge->add_option("--overlap", patch_overlap)->capture_default_str();
  merge->add_option("--iou", mg_iou, "Cross-patch NMS threshold")->capture_default_str();

  std::string em_vocab, em_out, em_template = "t3";
  int em_dim = 16;
  std::uint64_t em_seed = 0;
  auto* embed = app.add_subcommand("embed", "Write synthetic text embeddings for a vocabulary");
  embed->add_option("--vocab", em_vocab)->required()->check(CLI::ExistingFile);
  embed->add_option("--out", em_out)->required();
  embed->add_option("--dim", em_dim)->capture_default_str();
  embed->add_option("--seed", em_seed)->capture_default_str();
  embed->add_option("--template", em_template, "t1..t4")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*simulate) run_simulate(sim);
    if (*ablate) run_ablate(ab_config, ab_grid, ab_out);
    if (*eval) run_eval(ev_dets, ev_manifest, ev_vocab, ev_iou, ev_out);
    if (*select_cmd) run_select(sel);
    if (*split) run_split(sp_manifest, sp_vocab, sp_out, patch_size, patch_overlap);
    if (*merge) run_merge(mg_dets, mg_manifest, mg_vocab, mg_out, patch_size, patch_overlap, mg_iou);
    if (*embed) run_embed(em_vocab, em_dim, em_seed, em_template, em_out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violated: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
