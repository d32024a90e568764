// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "abt/common.hpp"
#include "abt/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace abt {

Manifest build_manifest(const std::string& root_dir) {
  if (!fs::is_directory(root_dir)) throw UserError("not a directory: " + root_dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(root_dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".wav") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());

  Manifest m;
  for (const auto& p : paths) {
    try {
      const Waveform w = read_wav(p);
      ManifestEntry e;
      e.path = p;
      e.clip_id = fs::relative(p, root_dir).string();
      e.duration_s = w.duration_s();
      m.entries.push_back(std::move(e));
    } catch (const std::exception& ex) {
      spdlog::warn("skipping unreadable file {}: {}", p, ex.what());
    }
  }
  if (m.entries.empty()) throw UserError("no audio files in " + root_dir);
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot write manifest: " + path);
  for (const auto& e : m.entries) {
    json j;
    j["clip_id"] = e.clip_id;
    j["path"] = e.path;
    j["duration_s"] = e.duration_s;
    if (e.label) j["label"] = *e.label;
    out << j.dump() << "\n";
  }
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read manifest: " + path);
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ManifestEntry e;
    e.clip_id = j.at("clip_id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.duration_s = j.at("duration_s").get<double>();
    if (j.contains("label")) e.label = j.at("label").get<std::string>();
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw UserError("manifest is empty: " + path);
  return m;
}

uint64_t mel_config_hash(const MelConfig& cfg) {
  json j;
  j["sample_rate_hz"] = cfg.sample_rate_hz;
  j["window_ms"] = cfg.window_ms;
  j["hop_ms"] = cfg.hop_ms;
  j["n_mels"] = cfg.n_mels;
  j["fmin_hz"] = cfg.fmin_hz;
  j["fmax_hz"] = cfg.fmax_hz;
  j["log_floor"] = cfg.log_floor;
  return fnv1a(j.dump());
}

namespace {

DatasetStats finalize_stats(const MomentAccumulator& all,
                            const std::vector<MomentAccumulator>& bins, uint64_t cfg_hash) {
  DatasetStats s;
  s.mean = all.mean();
  s.std = std::sqrt(all.variance());
  s.n_cells = all.n;
  s.mel_config_hash = cfg_hash;
  if (all.constant() || s.std <= 0.0) throw UserError("degenerate dataset statistics");
  for (const auto& acc : bins) {
    s.per_bin_mean.push_back(acc.mean());
    s.per_bin_std.push_back(std::sqrt(acc.variance()));
  }
  return s;
}

}  // namespace

DatasetStats dataset_stats(const Manifest& m, const MelConfig& cfg, bool per_bin) {
  if (m.empty()) throw UserError("manifest is empty");
  MomentAccumulator all;
  std::vector<MomentAccumulator> bins(per_bin ? static_cast<size_t>(cfg.n_mels) : 0);
  for (const auto& e : m.entries) {
    Waveform w = read_wav(e.path);
    if (w.sample_rate != cfg.sample_rate_hz) w = resample(w, cfg.sample_rate_hz);
    const Spectrogram s = logmel(w, cfg);
    for (int f = 0; f < s.n_mels; ++f) {
      for (int t = 0; t < s.n_frames; ++t) {
        all.add(s.at(f, t));
        if (per_bin) bins[static_cast<size_t>(f)].add(s.at(f, t));
      }
    }
  }
  return finalize_stats(all, bins, mel_config_hash(cfg));
}

DatasetStats dataset_stats_from_spectrograms(const std::vector<Spectrogram>& specs,
                                             uint64_t cfg_hash, bool per_bin) {
  if (specs.empty()) throw UserError("no spectrograms");
  MomentAccumulator all;
  std::vector<MomentAccumulator> bins(
      per_bin ? static_cast<size_t>(specs.front().n_mels) : 0);
  for (const auto& s : specs) {
    for (int f = 0; f < s.n_mels; ++f) {
      for (int t = 0; t < s.n_frames; ++t) {
        all.add(s.at(f, t));
        if (per_bin) bins[static_cast<size_t>(f)].add(s.at(f, t));
      }
    }
  }
  return finalize_stats(all, bins, cfg_hash);
}

void save_stats(const DatasetStats& s, const std::string& path) {
  json j;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["n_cells"] = s.n_cells;
  j["mel_config_hash"] = s.mel_config_hash;
  if (!s.per_bin_mean.empty()) {
    j["per_bin_mean"] = s.per_bin_mean;
    j["per_bin_std"] = s.per_bin_std;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot write stats: " + path);
  out << j.dump(2) << "\n";
}

DatasetStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read stats: " + path);
  json j = json::parse(in);
  DatasetStats s;
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.n_cells = j.at("n_cells").get<int64_t>();
  s.mel_config_hash = j.at("mel_config_hash").get<uint64_t>();
  if (j.contains("per_bin_mean")) {
    s.per_bin_mean = j.at("per_bin_mean").get<std::vector<double>>();
    s.per_bin_std = j.at("per_bin_std").get<std::vector<double>>();
  }
  return s;
}

void SynthSpec::validate(const MelConfig& mel) const {
  if (n_clips_per_class <= 0) throw UserError("synth spec: n_clips_per_class must be positive");
  if (classes.empty()) throw UserError("synth spec: no classes");
  for (const auto& c : classes) {
    if (c.f0_lo_hz < mel.fmin_hz || c.f0_hi_hz > mel.fmax_hz || c.f0_lo_hz > c.f0_hi_hz) {
      throw UserError("synth spec: class band outside [fmin, fmax]: " + c.name);
    }
    if (c.duration_s <= 0.0) throw UserError("synth spec: non-positive duration: " + c.name);
    if (c.kind != "tone" && c.kind != "chirp" && c.kind != "noise_burst") {
      throw UserError("synth spec: unknown kind: " + c.kind);
    }
  }
}

SynthSpec default_synth_spec(uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  spec.n_clips_per_class = 20;
  spec.classes = {
      {"low_tone", "tone", 300.0, 520.0, 1.2, 25.0},
      {"mid_chirp", "chirp", 1200.0, 2200.0, 1.2, 25.0},
      {"high_burst", "noise_burst", 4200.0, 6400.0, 1.2, 25.0},
  };
  return spec;
}

void save_synth_spec(const SynthSpec& spec, const std::string& path) {
  json j;
  j["n_clips_per_class"] = spec.n_clips_per_class;
  j["seed"] = spec.seed;
  j["sample_rate_hz"] = spec.sample_rate_hz;
  j["classes"] = json::array();
  for (const auto& c : spec.classes) {
    j["classes"].push_back({{"name", c.name},
                            {"kind", c.kind},
                            {"f0_lo_hz", c.f0_lo_hz},
                            {"f0_hi_hz", c.f0_hi_hz},
                            {"duration_s", c.duration_s},
                            {"snr_db", c.snr_db}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot write synth spec: " + path);
  out << j.dump(2) << "\n";
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read synth spec: " + path);
  json j = json::parse(in);
  SynthSpec spec;
  spec.n_clips_per_class = j.at("n_clips_per_class").get<int>();
  spec.seed = j.at("seed").get<uint64_t>();
  if (j.contains("sample_rate_hz")) spec.sample_rate_hz = j.at("sample_rate_hz").get<int>();
  for (const auto& jc : j.at("classes")) {
    SynthClass c;
    c.name = jc.at("name").get<std::string>();
    c.kind = jc.at("kind").get<std::string>();
    c.f0_lo_hz = jc.at("f0_lo_hz").get<double>();
    c.f0_hi_hz = jc.at("f0_hi_hz").get<double>();
    if (jc.contains("duration_s")) c.duration_s = jc.at("duration_s").get<double>();
    if (jc.contains("snr_db")) c.snr_db = jc.at("snr_db").get<double>();
    spec.classes.push_back(std::move(c));
  }
  return spec;
}

namespace {

std::vector<double> render_clip(const SynthClass& cls, int sr, Rng& rng) {
  const auto n = static_cast<size_t>(std::llround(cls.duration_s * sr));
  std::vector<double> x(n, 0.0);
  const double f0 = rng.uniform(cls.f0_lo_hz, cls.f0_hi_hz);

  if (cls.kind == "tone") {
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (size_t i = 0; i < n; ++i) {
      x[i] = std::sin(2.0 * M_PI * f0 * static_cast<double>(i) / sr + phase);
    }
  } else if (cls.kind == "chirp") {
    // Linear sweep across the class band, randomized direction.
    const bool up = rng.uniform() < 0.5;
    const double fa = up ? cls.f0_lo_hz : cls.f0_hi_hz;
    const double fb = up ? cls.f0_hi_hz : cls.f0_lo_hz;
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / sr;
      const double T = cls.duration_s;
      x[i] = std::sin(2.0 * M_PI * (fa * t + 0.5 * (fb - fa) / T * t * t) + phase);
    }
  } else {  // noise_burst: band-limited noise gated on/off
    // Band-limit by summing random-phase sinusoids across the band.
    const int n_partials = 24;
    std::vector<double> freqs(n_partials), phases(n_partials);
    for (int p = 0; p < n_partials; ++p) {
      freqs[static_cast<size_t>(p)] = rng.uniform(cls.f0_lo_hz, cls.f0_hi_hz);
      phases[static_cast<size_t>(p)] = rng.uniform(0.0, 2.0 * M_PI);
    }
    const double burst_hz = rng.uniform(3.0, 6.0);  // gate rate
    for (size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / sr;
      double v = 0.0;
      for (int p = 0; p < n_partials; ++p) {
        v += std::sin(2.0 * M_PI * freqs[static_cast<size_t>(p)] * t +
                      phases[static_cast<size_t>(p)]);
      }
      const double gate = std::sin(2.0 * M_PI * burst_hz * t) > 0.0 ? 1.0 : 0.05;
      x[i] = gate * v / std::sqrt(static_cast<double>(n_partials));
    }
  }

  // Background noise at the requested SNR, then peak-normalize to 0.7.
  double sig_pow = 0.0;
  for (double v : x) sig_pow += v * v;
  sig_pow /= static_cast<double>(n);
  const double noise_pow = sig_pow * std::pow(10.0, -cls.snr_db / 10.0);
  const double noise_std = std::sqrt(noise_pow);
  double peak = 0.0;
  for (auto& v : x) {
    v += noise_std * rng.normal();
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 0.0) {
    for (auto& v : x) v *= 0.7 / peak;
  }
  return x;
}

}  // namespace

Manifest synth_dataset(const SynthSpec& spec, const std::string& out_dir) {
  MelConfig mel;
  mel.sample_rate_hz = spec.sample_rate_hz;
  spec.validate(mel);
  fs::create_directories(out_dir);

  Manifest m;
  for (size_t ci = 0; ci < spec.classes.size(); ++ci) {
    const SynthClass& cls = spec.classes[ci];
    for (int k = 0; k < spec.n_clips_per_class; ++k) {
      Rng rng = Rng::from_key({spec.seed, 0x53594e54ull, ci, static_cast<uint64_t>(k)});
      Waveform w;
      w.sample_rate = spec.sample_rate_hz;
      w.samples = render_clip(cls, spec.sample_rate_hz, rng);

      char name[64];
      std::snprintf(name, sizeof(name), "%s_%04d.wav", cls.name.c_str(), k);
      const std::string path = (fs::path(out_dir) / name).string();
      write_wav_pcm16(path, w);

      ManifestEntry e;
      e.clip_id = name;
      e.path = path;
      e.duration_s = w.duration_s();
      e.label = cls.name;
      m.entries.push_back(std::move(e));
    }
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  return m;
}

}  // namespace abt
