// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: synth, stats, pretrain, embed, probe, sweep.
// Exit codes: 0 success, 1 user error, 2 internal error.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "abt/checkpoint.hpp"
#include "abt/common.hpp"
#include "abt/config.hpp"
#include "abt/eval.hpp"
#include "abt/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir;
  std::string log_level = "info";
  std::vector<std::string> overrides;
  bool seed_set = false;
  uint64_t seed = 0;
};

abt::RunConfig resolve_config(const GlobalOpts& g) {
  abt::RunConfig cfg;
  if (!g.config_path.empty()) cfg = abt::load_run_config(g.config_path);
  for (const auto& ov : g.overrides) abt::apply_override(cfg, ov);
  if (g.seed_set) {
    cfg.train.seed = g.seed;
    cfg.probe.split_seed = g.seed;
  }
  if (!g.out_dir.empty()) cfg.paths.out_dir = g.out_dir;
  return cfg;
}

/// Every run echoes its fully-resolved config into the run directory.
void echo_config(const abt::RunConfig& cfg) {
  fs::create_directories(cfg.paths.out_dir);
  abt::save_run_config(cfg, (fs::path(cfg.paths.out_dir) / "resolved_config.json").string());
}

json provenance(const abt::RunConfig& cfg) {
  return {{"config_hash", abt::config_hash(cfg)}, {"code_version", ABT_VERSION}};
}

std::map<std::string, std::string> load_labels(const std::string& path) {
  std::map<std::string, std::string> labels;
  if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
    const abt::Manifest m = abt::load_manifest(path);
    for (const auto& e : m.entries) {
      if (e.label) labels[e.clip_id] = *e.label;
    }
  } else {
    std::ifstream in(path);
    if (!in) throw abt::UserError("cannot read labels: " + path);
    const json j = json::parse(in);
    for (const auto& [k, v] : j.items()) labels[k] = v.get<std::string>();
  }
  if (labels.empty()) throw abt::UserError("no labels in " + path);
  return labels;
}

int cmd_synth(const GlobalOpts& g, const std::string& spec_path) {
  abt::RunConfig cfg = resolve_config(g);
  abt::SynthSpec spec = spec_path.empty() ? abt::default_synth_spec(cfg.train.seed)
                                          : abt::load_synth_spec(spec_path);
  if (g.seed_set) spec.seed = g.seed;
  echo_config(cfg);
  const std::string audio_dir = (fs::path(cfg.paths.out_dir) / "audio").string();
  abt::Manifest m = abt::synth_dataset(spec, audio_dir);
  const std::string manifest_path = (fs::path(cfg.paths.out_dir) / "manifest.jsonl").string();
  abt::save_manifest(m, manifest_path);
  abt::save_synth_spec(spec, (fs::path(cfg.paths.out_dir) / "synth_spec.json").string());
  std::cout << "wrote " << m.size() << " clips to " << audio_dir << "\n"
            << "manifest: " << manifest_path << "\n";
  return 0;
}

int cmd_stats(const GlobalOpts& g, bool per_bin) {
  abt::RunConfig cfg = resolve_config(g);
  if (cfg.paths.manifest.empty()) throw abt::UserError("stats: paths.manifest is required");
  echo_config(cfg);
  const abt::Manifest m = abt::load_manifest(cfg.paths.manifest);
  const abt::DatasetStats stats = abt::dataset_stats(m, cfg.train.mel, per_bin);
  const std::string out = cfg.paths.stats.empty()
                              ? (fs::path(cfg.paths.out_dir) / "stats.json").string()
                              : cfg.paths.stats;
  abt::save_stats(stats, out);
  std::cout << "stats: mean=" << stats.mean << " std=" << stats.std
            << " n_cells=" << stats.n_cells << " -> " << out << "\n";
  return 0;
}

int cmd_pretrain(const GlobalOpts& g, const std::string& resume) {
  abt::RunConfig cfg = resolve_config(g);
  if (cfg.paths.manifest.empty()) throw abt::UserError("pretrain: paths.manifest is required");
  if (cfg.paths.stats.empty()) throw abt::UserError("pretrain: paths.stats is required");
  cfg.train.validate();
  echo_config(cfg);
  const abt::Manifest m = abt::load_manifest(cfg.paths.manifest);
  const abt::DatasetStats stats = abt::load_stats(cfg.paths.stats);
  const abt::PretrainResult result =
      abt::pretrain(cfg.train, m, stats, cfg.paths.out_dir, resume);
  std::ofstream prov((fs::path(cfg.paths.out_dir) / "provenance.json").string());
  prov << provenance(cfg).dump(2) << "\n";
  std::cout << "final checkpoint: " << result.final_checkpoint << "\n";
  if (!result.metrics.empty()) {
    std::cout << "final loss: " << result.metrics.back().loss << " over "
              << result.metrics.size() << " steps\n";
  }
  return 0;
}

int cmd_embed(const GlobalOpts& g, const std::string& mode) {
  abt::RunConfig cfg = resolve_config(g);
  if (cfg.paths.checkpoint.empty()) throw abt::UserError("embed: paths.checkpoint is required");
  if (cfg.paths.manifest.empty()) throw abt::UserError("embed: paths.manifest is required");
  if (cfg.paths.stats.empty()) throw abt::UserError("embed: paths.stats is required");
  if (mode != "scene" && mode != "timestamp") {
    throw abt::UserError("embed: --mode must be scene or timestamp");
  }
  echo_config(cfg);

  const abt::Checkpoint ckpt = abt::load_checkpoint(cfg.paths.checkpoint);
  auto model = abt::load_model(ckpt);
  const abt::Manifest m = abt::load_manifest(cfg.paths.manifest);
  const abt::DatasetStats stats = abt::load_stats(cfg.paths.stats);

  abt::EmbeddingSet set;
  if (mode == "scene") {
    set = abt::extract_scene_embeddings(*model, m, stats, model->cfg.crop_frames);
  } else {
    set.dim = model->encoder->rep_dim();
    for (const auto& entry : m.entries) {
      abt::EmbeddingSet one = abt::extract_timestamp_embeddings(*model, entry, stats);
      for (auto& r : one.records) set.records.push_back(std::move(r));
    }
  }
  set.checkpoint_hash = abt::checkpoint_hash(cfg.paths.checkpoint);
  const std::string base = cfg.paths.embeddings.empty()
                               ? (fs::path(cfg.paths.out_dir) / ("embeddings_" + mode)).string()
                               : cfg.paths.embeddings;
  abt::save_embeddings(set, base);
  std::cout << "wrote " << set.records.size() << " embeddings (dim " << set.dim << ") to "
            << base << ".f32\n";
  return 0;
}

int cmd_probe(const GlobalOpts& g) {
  abt::RunConfig cfg = resolve_config(g);
  if (cfg.paths.embeddings.empty()) throw abt::UserError("probe: paths.embeddings is required");
  if (cfg.paths.labels.empty()) throw abt::UserError("probe: paths.labels is required");
  echo_config(cfg);

  const abt::EmbeddingSet set = abt::load_embeddings(cfg.paths.embeddings);
  if (!cfg.paths.checkpoint.empty()) {
    const uint64_t h = abt::checkpoint_hash(cfg.paths.checkpoint);
    if (h != set.checkpoint_hash) {
      spdlog::warn("embedding checkpoint hash {:x} does not match {:x} from {}",
                   set.checkpoint_hash, h, cfg.paths.checkpoint);
    }
  }
  const auto labels_by_id = load_labels(cfg.paths.labels);

  std::vector<std::string> labels;
  abt::Tensor x({static_cast<int64_t>(set.records.size()), set.dim});
  for (size_t i = 0; i < set.records.size(); ++i) {
    const auto it = labels_by_id.find(set.records[i].clip_id);
    if (it == labels_by_id.end()) {
      throw abt::UserError("no label for clip " + set.records[i].clip_id);
    }
    labels.push_back(it->second);
    for (int d = 0; d < set.dim; ++d) {
      x.at(static_cast<int64_t>(i), d) = set.records[i].vec[static_cast<size_t>(d)];
    }
  }
  auto [y, classes] = abt::one_hot_labels(labels);

  const abt::SplitIndices split = abt::make_split(
      static_cast<int>(set.records.size()), cfg.probe.train_frac, cfg.probe.val_frac,
      cfg.probe.split_seed);
  const auto grid = abt::default_probe_grid(cfg.probe.base);
  const abt::ProbeReport report = abt::train_probe(x, y, split, grid, cfg.probe.base.task_type,
                                                   cfg.probe.split_seed, "probe");
  const std::string out = (fs::path(cfg.paths.out_dir) / "probe_report.json").string();
  abt::save_probe_report(report, out);
  std::cout << report.metric_name << " = " << report.value << " (config "
            << report.chosen_config_id << ") -> " << out << "\n";
  return 0;
}

int cmd_sweep(const GlobalOpts& g, const std::string& grid_path) {
  abt::RunConfig base = resolve_config(g);
  std::ifstream in(grid_path);
  if (!in) throw abt::UserError("cannot read sweep grid: " + grid_path);
  const json grid = json::parse(in);
  if (!grid.contains("points") || !grid.at("points").is_array() || grid.at("points").empty()) {
    throw abt::UserError("sweep grid needs a non-empty 'points' array");
  }
  echo_config(base);

  std::set<std::string> seen;
  for (const auto& p : grid.at("points")) {
    const auto id = p.at("id").get<std::string>();
    if (!seen.insert(id).second) throw abt::UserError("duplicate sweep config id: " + id);
  }

  if (base.paths.manifest.empty() || base.paths.stats.empty()) {
    throw abt::UserError("sweep: paths.manifest and paths.stats are required");
  }
  const abt::Manifest manifest = abt::load_manifest(base.paths.manifest);
  const abt::DatasetStats stats = abt::load_stats(base.paths.stats);

  // Completed rows survive interruption; finished ids are skipped on rerun.
  const std::string csv_path = (fs::path(base.paths.out_dir) / "sweep_report.csv").string();
  std::map<std::string, std::pair<double, double>> rows;  // id -> (metric, final_loss)
  if (fs::exists(csv_path)) {
    std::ifstream existing(csv_path);
    std::string line;
    std::getline(existing, line);  // header
    while (std::getline(existing, line)) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) continue;
      rows[line.substr(0, c1)] = {std::stod(line.substr(c1 + 1, c2 - c1 - 1)),
                                  std::stod(line.substr(c2 + 1))};
    }
  }

  auto flush_csv = [&] {
    std::vector<std::pair<std::string, std::pair<double, double>>> sorted(rows.begin(),
                                                                          rows.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.second.first > b.second.first;
    });
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << "config_id,probe_metric,final_loss\n";
    for (const auto& [id, v] : sorted) csv << id << "," << v.first << "," << v.second << "\n";
  };

  for (const auto& p : grid.at("points")) {
    const auto id = p.at("id").get<std::string>();
    if (rows.count(id)) {
      spdlog::info("sweep point {} already done, skipping", id);
      continue;
    }
    abt::RunConfig cfg = base;
    if (p.contains("overrides")) {
      for (const auto& [key, value] : p.at("overrides").items()) {
        abt::apply_override(cfg, key + "=" + value.dump());
      }
    }
    const std::string point_dir = (fs::path(base.paths.out_dir) / ("sweep_" + id)).string();
    spdlog::info("sweep point {}: pretraining", id);
    const abt::PretrainResult res =
        abt::pretrain(cfg.train, manifest, stats, point_dir);

    const abt::Checkpoint ckpt = abt::load_checkpoint(res.final_checkpoint);
    auto model = abt::load_model(ckpt);
    abt::EmbeddingSet set =
        abt::extract_scene_embeddings(*model, manifest, stats, cfg.train.crop_frames);

    std::vector<std::string> labels;
    abt::Tensor x({static_cast<int64_t>(set.records.size()), set.dim});
    for (size_t i = 0; i < set.records.size(); ++i) {
      if (!manifest.entries[i].label) throw abt::UserError("sweep: manifest must carry labels");
      labels.push_back(*manifest.entries[i].label);
      for (int d = 0; d < set.dim; ++d) {
        x.at(static_cast<int64_t>(i), d) = set.records[i].vec[static_cast<size_t>(d)];
      }
    }
    auto [y, classes] = abt::one_hot_labels(labels);
    const abt::SplitIndices split =
        abt::make_split(static_cast<int>(set.records.size()), cfg.probe.train_frac,
                        cfg.probe.val_frac, cfg.probe.split_seed);
    const abt::ProbeReport report =
        abt::train_probe(x, y, split, abt::default_probe_grid(cfg.probe.base),
                         cfg.probe.base.task_type, cfg.probe.split_seed, id);

    const double final_loss = res.metrics.empty() ? 0.0 : res.metrics.back().loss;
    rows[id] = {report.value, final_loss};
    flush_csv();
    spdlog::info("sweep point {}: metric={:.4f} final_loss={:.4f}", id, report.value,
                 final_loss);
  }
  flush_csv();
  std::cout << "sweep report: " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin-view self-supervised audio representation learning"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "Run config JSON");
  app.add_option("--seed", g.seed, "Master seed override")->each([&](const std::string&) {
    g.seed_set = true;
  });
  app.add_option("--out-dir", g.out_dir, "Output directory override");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error");
  app.add_option("--set", g.overrides, "Config override, e.g. train.batch_size=32");

  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  std::string synth_spec;
  synth->add_option("--spec", synth_spec, "Synth spec JSON (defaults to the 3-class preset)");

  auto* stats = app.add_subcommand("stats", "Compute dataset log-mel statistics");
  bool per_bin = false;
  stats->add_flag("--per-bin", per_bin, "Also record per-mel-bin moments");

  auto* pretrain = app.add_subcommand("pretrain", "Run twin-view pretraining");
  std::string resume;
  pretrain->add_option("--resume", resume, "Checkpoint to resume from");

  auto* embed = app.add_subcommand("embed", "Extract frozen embeddings");
  std::string mode = "scene";
  embed->add_option("--mode", mode, "scene|timestamp");

  app.add_subcommand("probe", "Train the shallow-MLP probe on embeddings");

  auto* sweep = app.add_subcommand("sweep", "Run a config-grid sweep");
  std::string grid_path;
  sweep->add_option("--grid", grid_path, "Sweep grid JSON")->required();

  CLI11_PARSE(app, argc, argv);

  const auto level = spdlog::level::from_str(g.log_level);
  spdlog::set_level(level);

  try {
    if (app.got_subcommand("synth")) return cmd_synth(g, synth_spec);
    if (app.got_subcommand("stats")) return cmd_stats(g, per_bin);
    if (app.got_subcommand("pretrain")) return cmd_pretrain(g, resume);
    if (app.got_subcommand("embed")) return cmd_embed(g, mode);
    if (app.got_subcommand("probe")) return cmd_probe(g);
    if (app.got_subcommand("sweep")) return cmd_sweep(g, grid_path);
  } catch (const abt::UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
