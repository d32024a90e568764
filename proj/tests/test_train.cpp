// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "abt/common.hpp"
#include "abt/config.hpp"
#include "abt/train.hpp"
#include "abt/verify.hpp"

using namespace abt;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("abt_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Tiny AudioNTT stack over 16-mel clips: fast enough for loop tests.
TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.encoder = "audiontt";
  cfg.audiontt.conv_channels = 4;
  cfg.audiontt.fc_width = 16;
  cfg.projector.in_dim = 0;
  cfg.projector.hidden_dim = 16;
  cfg.projector.out_dim = 8;
  cfg.crop_frames = 24;
  cfg.checkpoint_every = 1;
  cfg.seed = 42;
  cfg.optimizer = "sgd";
  cfg.sgd.lr = 0.01;
  cfg.augment.mixup_queue_len = 16;
  cfg.mel.n_mels = 16;
  return cfg;
}

std::vector<Spectrogram> synthetic_clips(int n, int f, int t_lo, int t_hi, uint64_t seed) {
  std::vector<Spectrogram> clips;
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::from_key({seed, static_cast<uint64_t>(i)});
    const int t = static_cast<int>(rng.uniform_int(t_lo, t_hi));
    Spectrogram s(f, t, 10.0);
    for (auto& v : s.values) v = rng.normal() - 10.0;
    clips.push_back(std::move(s));
  }
  return clips;
}

DatasetStats stats_for(const std::vector<Spectrogram>& clips) {
  return dataset_stats_from_spectrograms(clips, 1);
}

std::string file_bytes(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("step metrics decomposition identity holds every step") {
  const TrainConfig cfg = tiny_config();
  auto clips = synthetic_clips(8, 16, 24, 40, 1);
  Trainer trainer(cfg, clips, stats_for(clips));
  for (int s = 0; s < trainer.steps_per_epoch(); ++s) {
    const StepMetrics m = trainer.train_step(trainer.prepare_batch(0, s));
    CHECK(std::abs(m.loss - (cfg.loss.alpha * m.invariance_term +
                             cfg.loss.lambda * m.redundancy_term)) <= 1e-6);
    CHECK(std::isfinite(m.feature_std_min));
  }
}

TEST_CASE("identical views force a unit diagonal") {
  TrainConfig cfg = tiny_config();
  cfg.augment.use_mixup = cfg.augment.use_rrc = cfg.augment.use_rlf = false;
  auto clips = synthetic_clips(8, 16, 30, 30, 2);
  Trainer trainer(cfg, clips, stats_for(clips));
  const StepMetrics m = trainer.train_step(trainer.prepare_batch(0, 0));
  CHECK(std::abs(m.diag_mean - 1.0) <= 1e-6);
  CHECK(std::abs(m.invariance_term) <= 1e-6);
  CHECK(m.loss == doctest::Approx(cfg.loss.lambda * m.redundancy_term).epsilon(1e-9));
}

TEST_CASE("fixed seeds give identical metric streams") {
  const TrainConfig cfg = tiny_config();
  auto clips = synthetic_clips(8, 16, 24, 40, 3);
  const DatasetStats st = stats_for(clips);

  auto run = [&]() {
    Trainer trainer(cfg, clips, st);
    std::vector<StepMetrics> out;
    for (int e = 0; e < cfg.epochs; ++e) {
      for (int s = 0; s < trainer.steps_per_epoch(); ++s) {
        out.push_back(trainer.train_step(trainer.prepare_batch(e, s)));
      }
    }
    return out;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss == b[i].loss);  // bit-identical
    CHECK(a[i].feature_std_min == b[i].feature_std_min);
  }
}

TEST_CASE("pretrain logs exactly epochs * floor(n/batch) steps") {
  const fs::path dir = tmp_dir("stepcount");
  const TrainConfig cfg = tiny_config();  // 2 epochs, batch 4
  auto clips = synthetic_clips(8, 16, 24, 40, 4);
  const PretrainResult res = pretrain_clips(cfg, clips, stats_for(clips), dir.string());
  CHECK(res.metrics.size() == 4);  // 2 epochs x 2 steps

  std::ifstream metrics((dir / "metrics.jsonl").string());
  int lines = 0;
  std::string line;
  while (std::getline(metrics, line)) {
    if (!line.empty()) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("step"));
      CHECK(j.contains("epoch"));
      CHECK(j.contains("loss"));
      CHECK(j.contains("invariance_term"));
      CHECK(j.contains("redundancy_term"));
      CHECK(j.contains("offdiag_mean_abs"));
      CHECK(j.contains("feature_std_min"));
      ++lines;
    }
  }
  CHECK(lines == 4);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint save/load/save produces identical bytes") {
  const fs::path dir = tmp_dir("roundtrip");
  const TrainConfig cfg = tiny_config();
  auto clips = synthetic_clips(8, 16, 24, 40, 5);
  Trainer trainer(cfg, clips, stats_for(clips));
  trainer.train_step(trainer.prepare_batch(0, 0));

  const std::string p1 = (dir / "a.abt").string();
  const std::string p2 = (dir / "b.abt").string();
  save_checkpoint(trainer.make_checkpoint(1), p1);
  const Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
  fs::remove_all(dir);
}

TEST_CASE("corrupt and truncated checkpoints are rejected") {
  const fs::path dir = tmp_dir("corrupt");
  const TrainConfig cfg = tiny_config();
  auto clips = synthetic_clips(8, 16, 24, 40, 6);
  Trainer trainer(cfg, clips, stats_for(clips));
  const std::string path = (dir / "ok.abt").string();
  save_checkpoint(trainer.make_checkpoint(0), path);

  std::string bytes = file_bytes(path);
  // Flip one byte mid-file.
  std::string flipped = bytes;
  flipped[flipped.size() / 2] = static_cast<char>(flipped[flipped.size() / 2] ^ 0x55);
  const std::string bad = (dir / "bad.abt").string();
  std::ofstream(bad, std::ios::binary) << flipped;
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), ("corrupt checkpoint: " + bad).c_str(), UserError);

  // Truncate.
  const std::string trunc = (dir / "trunc.abt").string();
  std::ofstream(trunc, std::ios::binary) << bytes.substr(0, bytes.size() / 3);
  CHECK_THROWS_AS(load_checkpoint(trunc), UserError);
  fs::remove_all(dir);
}

TEST_CASE("format_version mismatch is an explicit incompatibility error") {
  const fs::path dir = tmp_dir("version");
  const TrainConfig cfg = tiny_config();
  auto clips = synthetic_clips(8, 16, 24, 40, 7);
  Trainer trainer(cfg, clips, stats_for(clips));
  Checkpoint ckpt = trainer.make_checkpoint(0);
  ckpt.format_version = 2;
  const std::string path = (dir / "v2.abt").string();
  save_checkpoint(ckpt, path);
  try {
    load_checkpoint(path);
    CHECK(false);
  } catch (const UserError& e) {
    CHECK(std::string(e.what()).find("incompatible checkpoint format_version") !=
          std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("resume continues a run bit-identically") {
  const fs::path full_dir = tmp_dir("full");
  const fs::path resume_dir = tmp_dir("resumed");

  TrainConfig cfg = tiny_config();
  cfg.epochs = 4;
  cfg.checkpoint_every = 2;
  auto clips = synthetic_clips(8, 16, 24, 40, 8);
  const DatasetStats st = stats_for(clips);

  // One unbroken run, then a second run resumed from its mid-run checkpoint.
  const PretrainResult full = pretrain_clips(cfg, clips, st, full_dir.string());
  const std::string mid_ckpt = (full_dir / "ckpt_epoch0002.abt").string();
  REQUIRE(fs::exists(mid_ckpt));
  const PretrainResult resumed = pretrain_clips(cfg, clips, st, resume_dir.string(), mid_ckpt);

  REQUIRE(full.metrics.size() == 8);
  REQUIRE(resumed.metrics.size() == 4);  // epochs 3 and 4 only
  for (size_t i = 0; i < resumed.metrics.size(); ++i) {
    const StepMetrics& a = full.metrics[4 + i];
    const StepMetrics& b = resumed.metrics[i];
    CHECK(a.step == b.step);
    CHECK(a.loss == b.loss);  // bit-identical continuation
    CHECK(a.feature_std_min == b.feature_std_min);
  }

  // The final checkpoints of both runs hold identical tensors.
  const Checkpoint ck_full = load_checkpoint(full.final_checkpoint);
  const Checkpoint ck_res = load_checkpoint(resumed.final_checkpoint);
  REQUIRE(ck_full.tensors.size() == ck_res.tensors.size());
  for (const auto& [name, t] : ck_full.tensors) {
    CHECK(ck_res.tensors.at(name).data == t.data);
  }
  fs::remove_all(full_dir);
  fs::remove_all(resume_dir);
}

TEST_CASE("masking applies to view 2 only, with the documented token count") {
  TrainConfig cfg = tiny_config();
  cfg.encoder = "vit";
  cfg.vit.dim = 16;
  cfg.vit.depth = 1;
  cfg.vit.heads = 2;
  cfg.mel.n_mels = 64;
  cfg.crop_frames = 96;
  cfg.masking.enabled = true;
  cfg.masking.r = 0.2;
  auto clips = synthetic_clips(8, 64, 100, 120, 9);
  Trainer trainer(cfg, clips, stats_for(clips));

  const PreparedBatch batch = trainer.prepare_batch(0, 0);
  REQUIRE(batch.masks.size() == 4);
  for (const auto& plan : batch.masks) {
    CHECK(plan.masked.size() == 10);  // round(0.2 * 48)
    CHECK(static_cast<int>(plan.kept.size()) + 1 == ViT::attention_tokens(48, 0.2));
  }
  const StepMetrics m = trainer.train_step(batch);
  CHECK(std::isfinite(m.loss));
}

TEST_CASE("masking on an audiontt config is rejected") {
  TrainConfig cfg = tiny_config();
  cfg.masking.enabled = true;
  CHECK_THROWS_AS(cfg.validate(), UserError);
}

TEST_CASE("load_model rebuilds the frozen model from a checkpoint") {
  const fs::path dir = tmp_dir("loadmodel");
  const TrainConfig cfg = tiny_config();
  auto clips = synthetic_clips(8, 16, 24, 40, 10);
  Trainer trainer(cfg, clips, stats_for(clips));
  trainer.train_step(trainer.prepare_batch(0, 0));
  const std::string path = (dir / "m.abt").string();
  save_checkpoint(trainer.make_checkpoint(1), path);

  auto model = load_model(load_checkpoint(path));
  CHECK(model->encoder->rep_dim() == 16);
  for (int i = 0; i < model->store.n_params(); ++i) {
    CHECK(model->store.param(i).value.data == trainer.model().store.param(i).value.data);
  }
  fs::remove_all(dir);
}

TEST_CASE("collapse probe flags constant streams and passes healthy ones") {
  std::vector<double> healthy(200, 0.8);
  for (size_t i = 0; i < healthy.size(); ++i) healthy[i] += 0.01 * std::sin(0.1 * i);
  CHECK(!collapse_probe(healthy).collapsed);

  std::vector<double> constant(200, 0.0);
  const CollapseDiagnosis d = collapse_probe(constant);
  CHECK(d.collapsed);
  CHECK(d.first_flag_step >= 60 - 50);

  // Random i.i.d. embeddings keep healthy feature stds.
  Rng rng(1);
  std::vector<double> random_stream;
  for (int i = 0; i < 300; ++i) random_stream.push_back(0.7 + 0.1 * rng.uniform());
  CHECK(!collapse_probe(random_stream).collapsed);

  CHECK_THROWS_AS(collapse_probe(std::vector<double>(50, 1.0)), std::invalid_argument);
}

TEST_CASE("trainer rejects undersized datasets") {
  const TrainConfig cfg = tiny_config();
  auto clips = synthetic_clips(2, 16, 24, 30, 11);
  CHECK_THROWS_AS(Trainer(cfg, clips, stats_for(clips)), UserError);
}
