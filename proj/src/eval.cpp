// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "abt/common.hpp"
#include "abt/wav.hpp"

using nlohmann::json;

namespace abt {

namespace {

/// One inference-mode forward over a batch of normalized windows.
Tensor encode_windows(ModelBundle& model, const std::vector<Spectrogram>& windows) {
  Forward fw(model.store, /*train=*/false);
  const Tape::Id y = model.encoder->forward(fw, batch_to_tensor(windows));
  return fw.tape.val(y);
}

Spectrogram window_of(const Spectrogram& s, int t0, int t_len, double pad_value) {
  Spectrogram out(s.n_mels, t_len, s.frame_hop_ms, pad_value);
  for (int f = 0; f < s.n_mels; ++f) {
    for (int t = 0; t < t_len; ++t) {
      const int src = t0 + t;
      if (src >= 0 && src < s.n_frames) out.at(f, t) = s.at(f, src);
    }
  }
  return out;
}

Spectrogram load_normalized(const ManifestEntry& clip, const MelConfig& mel,
                            const DatasetStats& stats) {
  Waveform w = read_wav(clip.path);
  if (w.sample_rate != mel.sample_rate_hz) w = resample(w, mel.sample_rate_hz);
  return normalize(logmel(w, mel), stats);
}

}  // namespace

EmbeddingSet extract_scene_embeddings(ModelBundle& model, const Manifest& manifest,
                                      const DatasetStats& stats, int crop_frames,
                                      const std::string& pool) {
  if (pool != "mean" && pool != "max") throw UserError("scene pooling must be 'mean' or 'max'");
  const MelConfig& mel = model.cfg.mel;
  const double pad = (mel.silence_value() - stats.mean) / stats.std;

  EmbeddingSet set;
  set.dim = model.encoder->rep_dim();
  for (const auto& entry : manifest.entries) {
    const Spectrogram s = load_normalized(entry, mel, stats);
    // Consecutive windows covering the clip; the tail window is padded.
    const int n_win = std::max(1, (s.n_frames + crop_frames - 1) / crop_frames);
    std::vector<Spectrogram> windows;
    windows.reserve(static_cast<size_t>(n_win));
    for (int k = 0; k < n_win; ++k) {
      windows.push_back(window_of(s, k * crop_frames, crop_frames, pad));
    }
    const Tensor reps = encode_windows(model, windows);
    EmbeddingRecord rec;
    rec.clip_id = entry.clip_id;
    rec.vec.assign(static_cast<size_t>(set.dim), pool == "max" ? -HUGE_VAL : 0.0);
    for (int w = 0; w < n_win; ++w) {
      for (int d = 0; d < set.dim; ++d) {
        if (pool == "mean") {
          rec.vec[static_cast<size_t>(d)] += reps.at(w, d) / n_win;
        } else {
          rec.vec[static_cast<size_t>(d)] = std::max(rec.vec[static_cast<size_t>(d)], reps.at(w, d));
        }
      }
    }
    set.records.push_back(std::move(rec));
  }
  return set;
}

int timestamp_segment_count(double duration_ms, double segment_ms, double hop_ms) {
  if (duration_ms < segment_ms) return 1;  // zero-padded to one segment
  return static_cast<int>(std::floor((duration_ms - segment_ms) / hop_ms)) + 1;
}

EmbeddingSet extract_timestamp_embeddings(ModelBundle& model, const ManifestEntry& clip,
                                          const DatasetStats& stats, double segment_ms,
                                          double hop_ms) {
  const MelConfig& mel = model.cfg.mel;
  Waveform w = read_wav(clip.path);
  if (w.sample_rate != mel.sample_rate_hz) w = resample(w, mel.sample_rate_hz);
  const double duration_ms = w.duration_ms();
  const int n_seg = timestamp_segment_count(duration_ms, segment_ms, hop_ms);

  // Segment geometry in frames: a segment spans (seg_frames - 1) * hop = segment_ms.
  const int seg_frames = static_cast<int>(std::llround(segment_ms / mel.hop_ms)) + 1;
  const int hop_frames = static_cast<int>(std::llround(hop_ms / mel.hop_ms));
  const double pad = (mel.silence_value() - stats.mean) / stats.std;

  // Short clips are padded in the waveform domain to one full segment.
  const auto min_samples =
      static_cast<size_t>(mel.window_samples()) +
      static_cast<size_t>(seg_frames - 1) * static_cast<size_t>(mel.hop_samples());
  if (w.samples.size() < min_samples) w.samples.resize(min_samples, 0.0);
  const Spectrogram s = normalize(logmel(w, mel), stats);

  std::vector<Spectrogram> windows;
  windows.reserve(static_cast<size_t>(n_seg));
  for (int k = 0; k < n_seg; ++k) {
    windows.push_back(window_of(s, k * hop_frames, seg_frames, pad));
  }
  const Tensor reps = encode_windows(model, windows);

  EmbeddingSet set;
  set.dim = model.encoder->rep_dim();
  for (int k = 0; k < n_seg; ++k) {
    EmbeddingRecord rec;
    rec.clip_id = clip.clip_id;
    rec.timestamp_ms = k * hop_ms + segment_ms / 2.0;  // segment center
    rec.vec.resize(static_cast<size_t>(set.dim));
    for (int d = 0; d < set.dim; ++d) rec.vec[static_cast<size_t>(d)] = reps.at(k, d);
    set.records.push_back(std::move(rec));
  }
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::string& base_path) {
  std::ofstream bin(base_path + ".f32", std::ios::binary | std::ios::trunc);
  if (!bin) throw UserError("cannot write embeddings: " + base_path + ".f32");
  json sidecar;
  sidecar["dim"] = set.dim;
  sidecar["checkpoint_hash"] = set.checkpoint_hash;
  sidecar["clip_ids"] = json::array();
  bool any_ts = false;
  for (const auto& r : set.records) any_ts = any_ts || r.timestamp_ms.has_value();
  if (any_ts) sidecar["timestamps_ms"] = json::array();
  for (const auto& r : set.records) {
    sidecar["clip_ids"].push_back(r.clip_id);
    if (any_ts) sidecar["timestamps_ms"].push_back(r.timestamp_ms.value_or(-1.0));
    for (double v : r.vec) {
      const float f = static_cast<float>(v);
      bin.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
  std::ofstream side(base_path + ".json", std::ios::trunc);
  if (!side) throw UserError("cannot write embeddings sidecar: " + base_path + ".json");
  side << sidecar.dump(2) << "\n";
}

EmbeddingSet load_embeddings(const std::string& base_path) {
  std::ifstream side(base_path + ".json");
  if (!side) throw UserError("cannot read embeddings sidecar: " + base_path + ".json");
  const json sidecar = json::parse(side);
  EmbeddingSet set;
  set.dim = sidecar.at("dim").get<int>();
  set.checkpoint_hash = sidecar.at("checkpoint_hash").get<uint64_t>();
  const auto ids = sidecar.at("clip_ids").get<std::vector<std::string>>();
  std::vector<double> timestamps;
  if (sidecar.contains("timestamps_ms")) {
    timestamps = sidecar.at("timestamps_ms").get<std::vector<double>>();
  }

  std::ifstream bin(base_path + ".f32", std::ios::binary);
  if (!bin) throw UserError("cannot read embeddings: " + base_path + ".f32");
  for (size_t i = 0; i < ids.size(); ++i) {
    EmbeddingRecord rec;
    rec.clip_id = ids[i];
    if (!timestamps.empty()) rec.timestamp_ms = timestamps[i];
    rec.vec.resize(static_cast<size_t>(set.dim));
    for (int d = 0; d < set.dim; ++d) {
      float f;
      bin.read(reinterpret_cast<char*>(&f), sizeof(float));
      rec.vec[static_cast<size_t>(d)] = static_cast<double>(f);
    }
    if (!bin) throw UserError("embeddings file truncated: " + base_path + ".f32");
    set.records.push_back(std::move(rec));
  }
  return set;
}

void export_embeddings_csv(const EmbeddingSet& set, const std::string& csv_path) {
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw UserError("cannot write csv: " + csv_path);
  out << "clip_id,timestamp_ms";
  for (int d = 0; d < set.dim; ++d) out << ",e" << d;
  out << "\n";
  for (const auto& r : set.records) {
    out << r.clip_id << ",";
    if (r.timestamp_ms) out << *r.timestamp_ms;
    for (double v : r.vec) out << "," << v;
    out << "\n";
  }
}

// --------------------------------------------------------------------------
// probe
// --------------------------------------------------------------------------

void ProbeConfig::validate() const {
  if (hidden_layers < 0 || hidden_width <= 0) throw UserError("probe config: bad layer sizes");
  if (max_epochs <= 0 || check_every <= 0 || patience < 1) {
    throw UserError("probe config: bad early-stopping budget");
  }
  if (lr <= 0 || batch_size <= 0 || init_scale <= 0) throw UserError("probe config: bad values");
}

std::vector<ProbeConfig> default_probe_grid(const ProbeConfig& base) {
  std::vector<ProbeConfig> grid;
  for (int layers : {1, 2}) {
    for (double lr : {1e-3, 3e-4}) {
      for (double init : {1.0, 0.1}) {
        ProbeConfig c = base;
        c.hidden_layers = layers;
        c.lr = lr;
        c.init_scale = init;
        char id[64];
        std::snprintf(id, sizeof(id), "h%d_lr%g_s%g", layers, lr, init);
        c.id = id;
        grid.push_back(c);
      }
    }
  }
  return grid;
}

SplitIndices make_split(int n, double train_frac, double val_frac, uint64_t seed) {
  if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1.0) {
    throw UserError("split fractions must satisfy 0 < train, 0 <= val, train + val < 1");
  }
  Rng rng = Rng::from_key({seed, 0x53504c49ull});
  std::vector<int> order = rng.permutation(n);
  SplitIndices s;
  const int n_train = static_cast<int>(n * train_frac);
  const int n_val = static_cast<int>(n * val_frac);
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

void save_probe_report(const ProbeReport& r, const std::string& path) {
  json j;
  j["task_name"] = r.task_name;
  j["metric_name"] = r.metric_name;
  j["value"] = r.value;
  j["chosen_config_id"] = r.chosen_config_id;
  j["n_train"] = r.n_train;
  j["n_val"] = r.n_val;
  j["n_test"] = r.n_test;
  j["stopped_epoch"] = r.stopped_epoch;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot write probe report: " + path);
  out << j.dump(2) << "\n";
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& positives) {
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  int n_pos = 0;
  for (int p : positives) n_pos += p;
  if (n_pos == 0) return 0.0;
  double ap = 0.0;
  int hits = 0;
  for (size_t k = 0; k < n; ++k) {
    if (positives[order[k]]) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return ap / n_pos;
}

double accuracy_topk1(const Tensor& scores, const Tensor& labels) {
  const int64_t n = scores.dim(0), c = scores.dim(1);
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t pred = 0, truth = 0;
    for (int64_t j = 1; j < c; ++j) {
      if (scores.at(i, j) > scores.at(i, pred)) pred = j;
      if (labels.at(i, j) > labels.at(i, truth)) truth = j;
    }
    if (pred == truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double mean_average_precision(const Tensor& scores, const Tensor& labels) {
  const int64_t n = scores.dim(0), c = scores.dim(1);
  double acc = 0.0;
  int used = 0;
  for (int64_t j = 0; j < c; ++j) {
    std::vector<double> s(static_cast<size_t>(n));
    std::vector<int> y(static_cast<size_t>(n));
    int n_pos = 0;
    for (int64_t i = 0; i < n; ++i) {
      s[static_cast<size_t>(i)] = scores.at(i, j);
      y[static_cast<size_t>(i)] = labels.at(i, j) > 0.5 ? 1 : 0;
      n_pos += y[static_cast<size_t>(i)];
    }
    if (n_pos == 0) {
      spdlog::warn("mAP: class {} has no positives, excluded", j);
      continue;
    }
    acc += average_precision(s, y);
    ++used;
  }
  if (used == 0) throw UserError("mAP: no class has positives");
  return acc / used;
}

double compute_metric(const Tensor& scores, const Tensor& labels, TaskType kind) {
  if (!scores.same_shape(labels)) throw std::invalid_argument("metric: shape mismatch");
  return kind == TaskType::multiclass ? accuracy_topk1(scores, labels)
                                      : mean_average_precision(scores, labels);
}

std::pair<Tensor, std::vector<std::string>> one_hot_labels(
    const std::vector<std::string>& labels) {
  std::set<std::string> uniq(labels.begin(), labels.end());
  std::vector<std::string> classes(uniq.begin(), uniq.end());
  std::map<std::string, int> index;
  for (size_t i = 0; i < classes.size(); ++i) index[classes[i]] = static_cast<int>(i);
  Tensor y({static_cast<int64_t>(labels.size()), static_cast<int64_t>(classes.size())});
  for (size_t i = 0; i < labels.size(); ++i) {
    y.at(static_cast<int64_t>(i), index[labels[i]]) = 1.0;
  }
  return {std::move(y), std::move(classes)};
}

namespace {

/// The probe MLP: hidden_layers x [linear -> ReLU] + linear head.
struct ProbeModel {
  ParamStore store;
  std::vector<std::pair<int, int>> layers;  // (weight, bias)

  ProbeModel(int in_dim, int n_classes, const ProbeConfig& cfg, Rng& rng) {
    int in = in_dim;
    for (int l = 0; l < cfg.hidden_layers; ++l) {
      Tensor w = fanin_uniform({in, cfg.hidden_width}, in, rng);
      Tensor b = fanin_uniform({cfg.hidden_width}, in, rng);
      for (auto& v : w.data) v *= cfg.init_scale;
      for (auto& v : b.data) v *= cfg.init_scale;
      layers.emplace_back(store.add("probe.h" + std::to_string(l) + ".weight", std::move(w)),
                          store.add("probe.h" + std::to_string(l) + ".bias", std::move(b)));
      in = cfg.hidden_width;
    }
    Tensor w = fanin_uniform({in, n_classes}, in, rng);
    Tensor b = fanin_uniform({n_classes}, in, rng);
    for (auto& v : w.data) v *= cfg.init_scale;
    for (auto& v : b.data) v *= cfg.init_scale;
    layers.emplace_back(store.add("probe.out.weight", std::move(w)),
                        store.add("probe.out.bias", std::move(b)));
  }

  Tape::Id forward(Forward& fw, const Tensor& x) {
    Tape::Id h = fw.tape.leaf(x);
    for (size_t l = 0; l < layers.size(); ++l) {
      h = fw.tape.linear(h, fw.param(layers[l].first), fw.param(layers[l].second));
      if (l + 1 < layers.size()) h = fw.tape.relu(h);
    }
    return h;
  }

  Tensor logits(const Tensor& x) {
    Forward fw(store, /*train=*/false);
    return fw.tape.val(forward(fw, x));
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> s;
    for (int i = 0; i < store.n_params(); ++i) s.push_back(store.param(i).value);
    return s;
  }
  void restore(const std::vector<Tensor>& s) {
    for (int i = 0; i < store.n_params(); ++i) store.param(i).value = s[static_cast<size_t>(i)];
  }
};

Tensor rows(const Tensor& x, const std::vector<int>& idx) {
  const int64_t d = x.dim(1);
  Tensor out({static_cast<int64_t>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i) {
    for (int64_t j = 0; j < d; ++j) out.at(static_cast<int64_t>(i), j) = x.at(idx[i], j);
  }
  return out;
}

/// Gradient of mean cross-entropy (softmax or per-class sigmoid BCE) with
/// respect to the logits.
Tensor loss_grad_logits(const Tensor& logits, const Tensor& y, TaskType task) {
  const int64_t n = logits.dim(0), c = logits.dim(1);
  Tensor g({n, c});
  for (int64_t i = 0; i < n; ++i) {
    if (task == TaskType::multiclass) {
      double mx = logits.at(i, 0);
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
      double sum = 0.0;
      for (int64_t j = 0; j < c; ++j) sum += std::exp(logits.at(i, j) - mx);
      for (int64_t j = 0; j < c; ++j) {
        const double p = std::exp(logits.at(i, j) - mx) / sum;
        g.at(i, j) = (p - y.at(i, j)) / static_cast<double>(n);
      }
    } else {
      for (int64_t j = 0; j < c; ++j) {
        const double p = 1.0 / (1.0 + std::exp(-logits.at(i, j)));
        g.at(i, j) = (p - y.at(i, j)) / static_cast<double>(n * c);
      }
    }
  }
  return g;
}

struct TrainedProbe {
  double val_metric = 0.0;
  double test_metric = 0.0;
  int stopped_epoch = 0;
};

TrainedProbe train_one_probe(const Tensor& X, const Tensor& Y, const SplitIndices& split,
                             const ProbeConfig& cfg, TaskType task, uint64_t seed,
                             size_t config_index) {
  const Tensor x_train = rows(X, split.train), y_train = rows(Y, split.train);
  const Tensor x_val = rows(X, split.val), y_val = rows(Y, split.val);
  const Tensor x_test = rows(X, split.test), y_test = rows(Y, split.test);
  const int64_t n_train = x_train.dim(0);

  Rng init_rng = Rng::from_key({seed, kStreamProbe, config_index, 0});
  ProbeModel model(static_cast<int>(X.dim(1)), static_cast<int>(Y.dim(1)), cfg, init_rng);
  AdamWConfig adam;  // Adam defaults; decoupled decay at wd = 0 is plain Adam
  adam.lr = cfg.lr;
  adam.weight_decay = 0.0;
  AdamW opt(model.store, adam);

  double best_val = -HUGE_VAL;
  std::vector<Tensor> best_params = model.snapshot();
  int checks_without_improvement = 0;
  TrainedProbe out;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = Rng::from_key({seed, kStreamProbe, config_index,
                                     static_cast<uint64_t>(epoch)});
    std::vector<int> order = shuffle_rng.permutation(static_cast<int>(n_train));
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
      std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(off),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor xb = rows(x_train, idx), yb = rows(y_train, idx);
      Forward fw(model.store, /*train=*/true);
      const Tape::Id logits = model.forward(fw, xb);
      const Tensor g = loss_grad_logits(fw.tape.val(logits), yb, task);
      model.store.zero_grads();
      fw.tape.backward({{logits, g}});
      fw.flush_grads();
      opt.step(model.store);
    }

    if (epoch % cfg.check_every == 0) {
      const double val = compute_metric(model.logits(x_val), y_val, task);
      if (val > best_val) {
        best_val = val;
        best_params = model.snapshot();
        checks_without_improvement = 0;
      } else {
        ++checks_without_improvement;
      }
      if (checks_without_improvement >= cfg.patience) {
        out.stopped_epoch = epoch;
        break;
      }
    }
    out.stopped_epoch = epoch;
  }

  if (best_val == -HUGE_VAL) {
    // max_epochs below the first check: score the final state once.
    best_val = compute_metric(model.logits(x_val), y_val, task);
    best_params = model.snapshot();
  }
  model.restore(best_params);  // best-validation weights, not the last
  out.val_metric = best_val;
  out.test_metric = compute_metric(model.logits(x_test), y_test, task);
  return out;
}

}  // namespace

ProbeReport train_probe(const Tensor& X, const Tensor& Y, const SplitIndices& split,
                        const std::vector<ProbeConfig>& grid, TaskType task_type,
                        uint64_t seed, const std::string& task_name) {
  if (X.dim(0) != Y.dim(0)) throw std::invalid_argument("probe: X/Y row mismatch");
  if (grid.empty()) throw std::invalid_argument("probe: empty config grid");
  if (split.train.empty() || split.val.empty() || split.test.empty()) {
    throw UserError("probe: all three splits must be non-empty");
  }
  if (task_type == TaskType::multiclass) {
    std::set<int64_t> train_classes;
    for (int i : split.train) {
      for (int64_t j = 0; j < Y.dim(1); ++j) {
        if (Y.at(i, j) > 0.5) train_classes.insert(j);
      }
    }
    if (train_classes.size() < 2) throw UserError("probe: training labels have a single class");
  }

  double best_val = -HUGE_VAL;
  TrainedProbe best;
  std::string best_id;
  for (size_t gi = 0; gi < grid.size(); ++gi) {
    grid[gi].validate();
    const TrainedProbe t = train_one_probe(X, Y, split, grid[gi], task_type, seed, gi);
    spdlog::debug("probe config {}: val={:.4f} test={:.4f} stop_epoch={}", grid[gi].id,
                  t.val_metric, t.test_metric, t.stopped_epoch);
    if (t.val_metric > best_val) {
      best_val = t.val_metric;
      best = t;
      best_id = grid[gi].id;
    }
  }

  ProbeReport report;
  report.task_name = task_name;
  report.metric_name = task_type == TaskType::multiclass ? "accuracy" : "mAP";
  report.value = best.test_metric;
  report.chosen_config_id = best_id;
  report.n_train = static_cast<int>(split.train.size());
  report.n_val = static_cast<int>(split.val.size());
  report.n_test = static_cast<int>(split.test.size());
  report.stopped_epoch = best.stopped_epoch;
  return report;
}

}  // namespace abt
