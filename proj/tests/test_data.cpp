// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "abt/common.hpp"
#include "abt/data.hpp"
#include "abt/wav.hpp"
#include "oracles.hpp"

using namespace abt;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("abt_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_tone(const fs::path& path, double hz, double seconds = 0.2) {
  Waveform w;
  w.sample_rate = 16000;
  const auto n = static_cast<size_t>(seconds * 16000);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    w.samples[i] = 0.5 * std::sin(2.0 * M_PI * hz * static_cast<double>(i) / 16000.0);
  }
  write_wav_pcm16(path.string(), w);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("build_manifest sorts and filters") {
  const fs::path dir = tmp_dir("manifest");
  write_tone(dir / "c.wav", 440);
  write_tone(dir / "a.wav", 880);
  write_tone(dir / "b.wav", 660);
  std::ofstream(dir / "notes.txt") << "not audio";

  const Manifest m = build_manifest(dir.string());
  REQUIRE(m.size() == 3);
  CHECK(m.entries[0].clip_id == "a.wav");
  CHECK(m.entries[1].clip_id == "b.wav");
  CHECK(m.entries[2].clip_id == "c.wav");
  CHECK(m.entries[0].duration_s == doctest::Approx(0.2));
  fs::remove_all(dir);
}

TEST_CASE("build_manifest skips unreadable files, errors on none") {
  const fs::path dir = tmp_dir("skip");
  write_tone(dir / "ok.wav", 440);
  std::ofstream(dir / "broken.wav") << "garbage";
  const Manifest m = build_manifest(dir.string());
  CHECK(m.size() == 1);

  const fs::path empty = tmp_dir("empty");
  CHECK_THROWS_AS(build_manifest(empty.string()), UserError);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST_CASE("manifest JSONL round trip") {
  const fs::path dir = tmp_dir("jsonl");
  Manifest m;
  m.entries.push_back({"x.wav", "/tmp/x.wav", 1.5, std::nullopt});
  m.entries.push_back({"y.wav", "/tmp/y.wav", 2.0, "tone"});
  const std::string path = (dir / "m.jsonl").string();
  save_manifest(m, path);
  const Manifest r = load_manifest(path);
  REQUIRE(r.size() == 2);
  CHECK(!r.entries[0].label.has_value());
  CHECK(r.entries[1].label.value() == "tone");
  CHECK(r.entries[1].duration_s == doctest::Approx(2.0));
  fs::remove_all(dir);
}

TEST_CASE("dataset_stats closed form for two constant spectrograms") {
  // Constants a = 1, b = 3: mean 2, population std 1.
  std::vector<Spectrogram> specs = {Spectrogram(4, 5, 10.0, 1.0), Spectrogram(4, 5, 10.0, 3.0)};
  const DatasetStats s = dataset_stats_from_spectrograms(specs, 42);
  CHECK(s.mean == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.std == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.n_cells == 40);

  // Brute-force accumulation oracle.
  double sum = 0.0, sumsq = 0.0;
  int64_t n = 0;
  for (const auto& sp : specs) {
    for (double v : sp.values) {
      sum += v;
      sumsq += v * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  CHECK(s.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(s.std ==
        doctest::Approx(std::sqrt(sumsq / static_cast<double>(n) - mean * mean)).epsilon(1e-12));
}

TEST_CASE("dataset_stats is permutation and chunking invariant") {
  Rng rng(5);
  std::vector<Spectrogram> specs;
  for (int i = 0; i < 6; ++i) {
    Spectrogram s(8, 11, 10.0);
    for (auto& v : s.values) v = rng.normal() * 3.0 + 1.0;
    specs.push_back(std::move(s));
  }
  const DatasetStats fwd = dataset_stats_from_spectrograms(specs, 0);
  std::vector<Spectrogram> rev(specs.rbegin(), specs.rend());
  const DatasetStats bwd = dataset_stats_from_spectrograms(rev, 0);
  CHECK(std::abs(fwd.mean - bwd.mean) <= 1e-9);
  CHECK(std::abs(fwd.std - bwd.std) <= 1e-9);

  // Streaming merge over chunks equals the one-shot pass.
  MomentAccumulator left, right;
  for (int i = 0; i < 3; ++i) {
    for (double v : specs[static_cast<size_t>(i)].values) left.add(v);
  }
  for (int i = 3; i < 6; ++i) {
    for (double v : specs[static_cast<size_t>(i)].values) right.add(v);
  }
  left.merge(right);
  CHECK(std::abs(left.mean() - fwd.mean) <= 1e-9);
  CHECK(std::abs(std::sqrt(left.variance()) - fwd.std) <= 1e-9);
}

TEST_CASE("dataset_stats rejects degenerate (silent) datasets") {
  const fs::path dir = tmp_dir("degenerate");
  Waveform silent;
  silent.sample_rate = 16000;
  silent.samples.assign(8000, 0.0);
  write_wav_pcm16((dir / "s1.wav").string(), silent);
  write_wav_pcm16((dir / "s2.wav").string(), silent);
  const Manifest m = build_manifest(dir.string());
  MelConfig mel;
  CHECK_THROWS_WITH_AS(dataset_stats(m, mel), "degenerate dataset statistics", UserError);
  fs::remove_all(dir);
}

TEST_CASE("stats JSON round trip with per-bin moments") {
  const fs::path dir = tmp_dir("stats");
  std::vector<Spectrogram> specs = {Spectrogram(2, 3, 10.0, 1.0), Spectrogram(2, 3, 10.0, 2.0)};
  const DatasetStats s = dataset_stats_from_spectrograms(specs, 7, /*per_bin=*/true);
  REQUIRE(s.per_bin_mean.size() == 2);
  const std::string path = (dir / "stats.json").string();
  save_stats(s, path);
  const DatasetStats r = load_stats(path);
  CHECK(r.mean == s.mean);
  CHECK(r.std == s.std);
  CHECK(r.mel_config_hash == 7);
  CHECK(r.per_bin_mean == s.per_bin_mean);
  fs::remove_all(dir);
}

TEST_CASE("synth_dataset writes a labeled, deterministic dataset") {
  const fs::path dir1 = tmp_dir("synth1");
  const fs::path dir2 = tmp_dir("synth2");
  SynthSpec spec = default_synth_spec(99);
  REQUIRE(spec.classes.size() == 3);
  spec.n_clips_per_class = 4;

  const Manifest m1 = synth_dataset(spec, dir1.string());
  CHECK(m1.size() == 12);  // 3 classes x 4 clips
  std::map<std::string, int> per_class;
  for (const auto& e : m1.entries) {
    REQUIRE(e.label.has_value());
    per_class[*e.label]++;
  }
  CHECK(per_class.size() == 3);
  for (const auto& [cls, count] : per_class) CHECK(count == 4);

  const Manifest m2 = synth_dataset(spec, dir2.string());
  for (size_t i = 0; i < m1.size(); ++i) {
    CHECK(file_bytes(m1.entries[i].path) == file_bytes(m2.entries[i].path));
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("synthetic tone lands in the oracle mel bin") {
  const fs::path dir = tmp_dir("tonebin");
  SynthSpec spec;
  spec.seed = 3;
  spec.n_clips_per_class = 1;
  spec.classes = {{"a440", "tone", 440.0, 440.0, 0.5, 60.0}};
  const Manifest m = synth_dataset(spec, dir.string());

  MelConfig mel;
  const Waveform w = read_wav(m.entries[0].path);
  const Spectrogram s = logmel(w, mel);
  const auto centers = oracles::reference_mel_centers(mel.n_mels, mel.fmin_hz, mel.fmax_hz);
  const int expected = oracles::nearest_mel_bin(440.0, centers);
  for (int t = 5; t < s.n_frames - 5; t += 9) {
    int argmax = 0;
    for (int f = 1; f < s.n_mels; ++f) {
      if (s.at(f, t) > s.at(argmax, t)) argmax = f;
    }
    CHECK(std::abs(argmax - expected) <= 1);
  }
  fs::remove_all(dir);
}

TEST_CASE("synthetic classes are separable in time-averaged mel space") {
  const fs::path dir = tmp_dir("margin");
  SynthSpec spec = default_synth_spec(17);
  spec.n_clips_per_class = 6;
  const Manifest m = synth_dataset(spec, dir.string());
  MelConfig mel;

  // Time-averaged mel vector per clip, centroid per class.
  std::map<std::string, std::vector<std::vector<double>>> by_class;
  for (const auto& e : m.entries) {
    const Spectrogram s = logmel(read_wav(e.path), mel);
    std::vector<double> avg(static_cast<size_t>(s.n_mels), 0.0);
    for (int f = 0; f < s.n_mels; ++f) {
      for (int t = 0; t < s.n_frames; ++t) avg[static_cast<size_t>(f)] += s.at(f, t);
      avg[static_cast<size_t>(f)] /= s.n_frames;
    }
    by_class[*e.label].push_back(std::move(avg));
  }

  std::map<std::string, std::vector<double>> centroid;
  for (const auto& [cls, vecs] : by_class) {
    std::vector<double> c(vecs[0].size(), 0.0);
    for (const auto& v : vecs) {
      for (size_t i = 0; i < v.size(); ++i) c[i] += v[i] / static_cast<double>(vecs.size());
    }
    centroid[cls] = std::move(c);
  }

  // Margin check: every clip is strictly closest to its own class centroid.
  auto dist2 = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    return d2;
  };
  for (const auto& [cls, vecs] : by_class) {
    for (const auto& v : vecs) {
      const double own = dist2(v, centroid[cls]);
      for (const auto& [other, c] : centroid) {
        if (other != cls) CHECK(own < dist2(v, c));
      }
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("synth spec validation") {
  MelConfig mel;
  SynthSpec spec = default_synth_spec(1);
  spec.classes[0].f0_lo_hz = 10.0;  // below fmin
  CHECK_THROWS_AS(spec.validate(mel), UserError);

  SynthSpec empty;
  empty.classes.clear();
  CHECK_THROWS_AS(empty.validate(mel), UserError);
}
