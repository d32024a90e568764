// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/train.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "abt/common.hpp"
#include "abt/config.hpp"
#include "abt/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace abt {

void MaskingConfig::validate() const {
  if (!(r >= 0.0 && r < 1.0)) throw UserError("masking config: r must be in [0, 1)");
  if (!(beta >= 0.0 && beta < 1.0)) throw UserError("masking config: beta must be in [0, 1)");
  if (warmup_epochs < 0) throw UserError("masking config: warmup_epochs must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw UserError("train config: epochs must be positive");
  if (batch_size < 2) throw UserError("train config: batch_size must be >= 2");
  if (crop_frames <= 0) throw UserError("train config: crop_frames must be positive");
  if (checkpoint_every <= 0) throw UserError("train config: checkpoint_every must be positive");
  if (encoder != "audiontt" && encoder != "vit" && encoder != "vit_c") {
    throw UserError("train config: unknown encoder '" + encoder + "'");
  }
  if (optimizer != "lars" && optimizer != "adamw" && optimizer != "sgd") {
    throw UserError("train config: unknown optimizer '" + optimizer + "'");
  }
  if (precision != "f64" && precision != "f32") {
    throw UserError("train config: precision must be f64 or f32");
  }
  if (masking.enabled && encoder == "audiontt") {
    throw UserError("train config: patch masking applies to ViT encoders only");
  }
  mel.validate();
  augment.validate();
  loss.validate();
  masking.validate();
}

json step_metrics_to_json(const StepMetrics& m) {
  json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["invariance_term"] = m.invariance_term;
  j["redundancy_term"] = m.redundancy_term;
  j["offdiag_mean_abs"] = m.offdiag_mean_abs;
  j["diag_mean"] = m.diag_mean;
  j["feature_std_min"] = m.feature_std_min;
  return j;
}

std::unique_ptr<ModelBundle> build_model(const TrainConfig& cfg) {
  cfg.validate();
  auto model = std::make_unique<ModelBundle>();
  model->cfg = cfg;
  Rng init_rng = Rng::from_key({cfg.seed, kStreamInit});

  if (cfg.encoder == "audiontt") {
    AudioNTTConfig acfg = cfg.audiontt;
    acfg.n_mels = cfg.mel.n_mels;
    model->encoder = make_audiontt(model->store, acfg, init_rng);
  } else {
    ViTConfig vcfg = cfg.vit;
    vcfg.variant = cfg.encoder;
    model->encoder = make_vit(model->store, vcfg, init_rng);
  }

  ProjectorConfig pcfg = cfg.projector;
  if (pcfg.in_dim == 0) pcfg.in_dim = model->encoder->rep_dim();
  if (pcfg.in_dim != model->encoder->rep_dim()) {
    throw UserError("projector in_dim does not match encoder rep_dim");
  }
  model->cfg.projector = pcfg;
  model->projector = std::make_unique<Projector>(model->store, pcfg, init_rng);
  return model;
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& cfg, const ParamStore& store) {
  if (cfg.optimizer == "lars") return std::make_unique<Lars>(store, cfg.lars);
  if (cfg.optimizer == "adamw") return std::make_unique<AdamW>(store, cfg.adamw);
  return std::make_unique<Sgd>(store, cfg.sgd);
}

std::vector<Spectrogram> load_clips(const Manifest& manifest, const MelConfig& mel) {
  std::vector<Spectrogram> clips;
  clips.reserve(manifest.size());
  for (const auto& e : manifest.entries) {
    Waveform w = read_wav(e.path);
    if (w.sample_rate != mel.sample_rate_hz) w = resample(w, mel.sample_rate_hz);
    clips.push_back(logmel(w, mel));
  }
  return clips;
}

// --------------------------------------------------------------------------
// Trainer
// --------------------------------------------------------------------------

namespace {

/// f32 precision emulation: parameters round-trip through float after each
/// optimizer step; compute stays in double.
void round_params_to_f32(ParamStore& store) {
  for (int i = 0; i < store.n_params(); ++i) {
    for (auto& v : store.param(i).value.data) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, std::vector<Spectrogram> clips, DatasetStats stats)
    : cfg_(cfg),
      clips_(std::move(clips)),
      stats_(std::move(stats)),
      queue_(cfg.augment.mixup_queue_len) {
  cfg_.validate();
  if (clips_.empty()) throw UserError("trainer: no clips");
  if (static_cast<int>(clips_.size()) < cfg_.batch_size) {
    throw UserError("trainer: fewer clips than one batch");
  }
  model_ = build_model(cfg_);
  cfg_ = model_->cfg;  // resolved projector dims
  opt_ = make_optimizer(cfg_, model_->store);
}

int Trainer::steps_per_epoch() const {
  return static_cast<int>(clips_.size()) / cfg_.batch_size;
}

std::vector<int> Trainer::epoch_order(int epoch) const {
  Rng rng = Rng::from_key({cfg_.seed, kStreamShuffle, static_cast<uint64_t>(epoch)});
  return rng.permutation(static_cast<int>(clips_.size()));
}

PreparedBatch Trainer::prepare_batch(int epoch, int step_in_epoch) {
  const std::vector<int> order = epoch_order(epoch);
  const int B = cfg_.batch_size;
  PreparedBatch out;
  out.epoch = epoch;
  out.step_in_epoch = step_in_epoch;
  out.global_step = static_cast<int64_t>(epoch) * steps_per_epoch() + step_in_epoch + 1;

  std::vector<Spectrogram> cropped;
  std::vector<uint64_t> clip_seeds;
  cropped.reserve(static_cast<size_t>(B));
  clip_seeds.reserve(static_cast<size_t>(B));
  const double pad = cfg_.mel.silence_value();
  for (int i = 0; i < B; ++i) {
    const int clip = order[static_cast<size_t>(step_in_epoch * B + i)];
    Rng crop_rng = Rng::from_key({cfg_.seed, kStreamCrop, static_cast<uint64_t>(epoch),
                                  static_cast<uint64_t>(step_in_epoch),
                                  static_cast<uint64_t>(i)});
    cropped.push_back(crop_or_pad(clips_[static_cast<size_t>(clip)], cfg_.crop_frames,
                                  crop_rng, pad));
    clip_seeds.push_back(Rng::derive_seed({cfg_.seed, kStreamAugment,
                                           static_cast<uint64_t>(epoch),
                                           static_cast<uint64_t>(step_in_epoch),
                                           static_cast<uint64_t>(i)}));
  }

  auto views = make_view_batch(cropped, cfg_.augment, stats_, queue_, clip_seeds);
  out.view1 = std::move(views.first);
  out.view2 = std::move(views.second);

  if (cfg_.masking.enabled) {
    const double r = cfg_.masking.use_schedule
                         ? masking_ratio_at(epoch, cfg_.masking.beta, cfg_.epochs,
                                            cfg_.masking.warmup_epochs)
                         : cfg_.masking.r;
    if (r > 0.0) {
      ViTConfig vcfg = cfg_.vit;
      const int n = vcfg.n_patches(cfg_.mel.n_mels, cfg_.crop_frames);
      for (int i = 0; i < B; ++i) {
        Rng mask_rng = Rng::from_key({cfg_.seed, kStreamMask, static_cast<uint64_t>(epoch),
                                      static_cast<uint64_t>(step_in_epoch),
                                      static_cast<uint64_t>(i)});
        out.masks.push_back(mask_patches(n, r, mask_rng));
      }
    }
  }
  return out;
}

StepMetrics Trainer::train_step(const PreparedBatch& batch) {
  ParamStore& store = model_->store;
  Rng drop_rng = Rng::from_key({cfg_.seed, kStreamDropout,
                                static_cast<uint64_t>(batch.epoch),
                                static_cast<uint64_t>(batch.step_in_epoch)});
  Forward fw(store, /*train=*/true, drop_rng);

  const Tensor x1 = batch_to_tensor(batch.view1);
  const Tensor x2 = batch_to_tensor(batch.view2);
  // Twin arms share one parameter store and one leaf per parameter;
  // masking (when present) applies to view 2 only.
  const Tape::Id z1 = model_->projector->forward(fw, model_->encoder->forward(fw, x1));
  const Tape::Id z2 = model_->projector->forward(
      fw, model_->encoder->forward(fw, x2, batch.masks.empty() ? nullptr : &batch.masks));

  const Tensor& Z1 = fw.tape.val(z1);
  const Tensor& Z2 = fw.tape.val(z2);
  if (!Z1.all_finite() || !Z2.all_finite()) {
    throw std::runtime_error("non-finite embeddings at step " +
                             std::to_string(batch.global_step) +
                             " (loss diverged upstream of the objective)");
  }
  const Tensor zh1 = batch_normalize(Z1, cfg_.loss.std_floor);
  const Tensor zh2 = batch_normalize(Z2, cfg_.loss.std_floor);
  const Tensor C = cross_correlation(zh1, zh2);
  const LossTerms terms = bt_loss_terms(C, cfg_.loss);

  if (!std::isfinite(terms.loss)) {
    throw std::runtime_error(
        "non-finite loss at step " + std::to_string(batch.global_step) +
        " (diag_mean=" + std::to_string(diag_mean(C)) +
        ", offdiag_mean_abs=" + std::to_string(offdiag_mean_abs(C)) +
        ", feature_std_min=" + std::to_string(feature_std_min(Z1)) + ")");
  }

  auto grads = bt_loss_grad(Z1, Z2, cfg_.loss);
  store.zero_grads();
  fw.tape.backward({{z1, std::move(grads.first)}, {z2, std::move(grads.second)}});
  fw.flush_grads();
  opt_->step(store);
  if (cfg_.precision == "f32") round_params_to_f32(store);

  StepMetrics m;
  m.step = batch.global_step;
  m.epoch = batch.epoch;
  m.loss = terms.loss;
  m.invariance_term = terms.invariance;
  m.redundancy_term = terms.redundancy;
  m.offdiag_mean_abs = offdiag_mean_abs(C);
  m.diag_mean = diag_mean(C);
  m.feature_std_min = feature_std_min(Z1);
  global_step_ = batch.global_step;
  return m;
}

Checkpoint Trainer::make_checkpoint(int epoch_completed) const {
  Checkpoint ckpt;
  ckpt.config = train_config_to_json(cfg_);
  ckpt.epoch = epoch_completed;
  ckpt.step = global_step_;

  const ParamStore& store = model_->store;
  for (int i = 0; i < store.n_params(); ++i) {
    ckpt.tensors.emplace("param/" + store.param(i).name, store.param(i).value);
  }
  for (int i = 0; i < store.n_buffers(); ++i) {
    ckpt.tensors.emplace("buffer/" + store.buffer_name(i),
                         const_cast<ParamStore&>(store).buffer(i));
  }
  for (auto& [key, t] : opt_->state_tensors(store)) {
    ckpt.tensors.emplace("opt/" + key, std::move(t));
  }
  for (size_t i = 0; i < queue_.size(); ++i) {
    const Spectrogram& s = queue_.item(i);
    char name[32];
    std::snprintf(name, sizeof(name), "queue/%06zu", i);
    ckpt.tensors.emplace(name, Tensor({s.n_mels, s.n_frames}, s.values));
  }

  ckpt.extra["seed"] = cfg_.seed;
  ckpt.extra["optimizer_kind"] = opt_->kind();
  ckpt.extra["optimizer_step_count"] = opt_->step_count();
  ckpt.extra["queue_len"] = queue_.size();
  ckpt.extra["queue_hop_ms"] = cfg_.mel.hop_ms;
  ckpt.extra["rng"] = {{"scheme", "stateless-key-derived"}, {"master_seed", cfg_.seed}};
  ckpt.extra["code_version"] = ABT_VERSION;
  ckpt.extra["config_hash"] = fnv1a(ckpt.config.dump());
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const TrainConfig ck_cfg = train_config_from_json(ckpt.config);
  if (train_config_to_json(ck_cfg).dump() != train_config_to_json(cfg_).dump()) {
    throw UserError("checkpoint config does not match the run config");
  }
  ParamStore& store = model_->store;
  for (int i = 0; i < store.n_params(); ++i) {
    store.param(i).value = ckpt.tensors.at("param/" + store.param(i).name);
  }
  for (int i = 0; i < store.n_buffers(); ++i) {
    store.buffer(i) = ckpt.tensors.at("buffer/" + store.buffer_name(i));
  }
  std::map<std::string, Tensor> opt_state;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("opt/", 0) == 0) opt_state.emplace(name.substr(4), t);
  }
  opt_->load_state_tensors(store, opt_state);
  opt_->set_step_count(ckpt.extra.at("optimizer_step_count").get<int64_t>());

  queue_.clear();
  const size_t qlen = ckpt.extra.at("queue_len").get<size_t>();
  const double hop_ms = ckpt.extra.at("queue_hop_ms").get<double>();
  for (size_t i = 0; i < qlen; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "queue/%06zu", i);
    const Tensor& t = ckpt.tensors.at(name);
    Spectrogram s(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), hop_ms);
    s.values.assign(t.data.begin(), t.data.end());
    queue_.push(s);
  }
  global_step_ = ckpt.step;
}

std::unique_ptr<ModelBundle> load_model(const Checkpoint& ckpt) {
  auto model = build_model(train_config_from_json(ckpt.config));
  ParamStore& store = model->store;
  for (int i = 0; i < store.n_params(); ++i) {
    store.param(i).value = ckpt.tensors.at("param/" + store.param(i).name);
  }
  for (int i = 0; i < store.n_buffers(); ++i) {
    store.buffer(i) = ckpt.tensors.at("buffer/" + store.buffer_name(i));
  }
  return model;
}

// --------------------------------------------------------------------------
// pretrain loop with bounded prefetch
// --------------------------------------------------------------------------

namespace {

/// Single-producer single-consumer pipeline, capacity 2 batches, with an
/// epoch gate: the producer does not cross into epoch e+1 until the trainer
/// confirms epoch e (so checkpoints see the exact post-epoch queue state).
class BatchPipeline {
 public:
  BatchPipeline(Trainer& trainer, int start_epoch, int end_epoch)
      : trainer_(trainer), end_epoch_(end_epoch), confirmed_epoch_(start_epoch - 1) {
    worker_ = std::thread([this, start_epoch] { run(start_epoch); });
  }

  ~BatchPipeline() {
    {
      std::unique_lock lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  PreparedBatch pop() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [this] { return !buf_.empty() || error_ || stop_; });
    if (error_) std::rethrow_exception(error_);
    PreparedBatch b = std::move(buf_.front());
    buf_.pop_front();
    cv_.notify_all();
    return b;
  }

  void confirm_epoch(int epoch) {
    {
      std::unique_lock lk(mu_);
      confirmed_epoch_ = epoch;
    }
    cv_.notify_all();
  }

 private:
  void run(int start_epoch) {
    try {
      const int steps = trainer_.steps_per_epoch();
      for (int e = start_epoch; e < end_epoch_; ++e) {
        {
          std::unique_lock lk(mu_);
          cv_.wait(lk, [this, e] { return confirmed_epoch_ >= e - 1 || stop_; });
          if (stop_) return;
        }
        for (int s = 0; s < steps; ++s) {
          PreparedBatch b = trainer_.prepare_batch(e, s);
          std::unique_lock lk(mu_);
          cv_.wait(lk, [this] { return buf_.size() < 2 || stop_; });
          if (stop_) return;
          buf_.push_back(std::move(b));
          cv_.notify_all();
        }
      }
    } catch (...) {
      std::unique_lock lk(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  Trainer& trainer_;
  const int end_epoch_;
  std::thread worker_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<PreparedBatch> buf_;
  int confirmed_epoch_;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace

PretrainResult pretrain_clips(const TrainConfig& cfg, std::vector<Spectrogram> clips,
                              const DatasetStats& stats, const std::string& out_dir,
                              const std::string& resume_path) {
  fs::create_directories(out_dir);
  Trainer trainer(cfg, std::move(clips), stats);

  int start_epoch = 0;
  if (!resume_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume_path);
    trainer.restore(ckpt);
    start_epoch = static_cast<int>(ckpt.epoch);
    spdlog::info("resumed from {} at epoch {}", resume_path, start_epoch);
  }

  const int steps = trainer.steps_per_epoch();
  if (steps == 0) throw UserError("pretrain: dataset smaller than one batch");

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
  if (!metrics) throw UserError("cannot write metrics log: " + metrics_path);

  PretrainResult result;
  BatchPipeline pipeline(trainer, start_epoch, cfg.epochs);
  std::string last_ckpt;
  for (int e = start_epoch; e < cfg.epochs; ++e) {
    for (int s = 0; s < steps; ++s) {
      const StepMetrics m = trainer.train_step(pipeline.pop());
      metrics << step_metrics_to_json(m).dump() << "\n";
      result.metrics.push_back(m);
    }
    metrics.flush();
    if ((e + 1) % cfg.checkpoint_every == 0 || e + 1 == cfg.epochs) {
      char name[48];
      std::snprintf(name, sizeof(name), "ckpt_epoch%04d.abt", e + 1);
      last_ckpt = (fs::path(out_dir) / name).string();
      save_checkpoint(trainer.make_checkpoint(e + 1), last_ckpt);
      spdlog::info("epoch {} done, checkpoint {}", e + 1, last_ckpt);
    }
    pipeline.confirm_epoch(e);
  }
  result.final_checkpoint = last_ckpt;
  return result;
}

PretrainResult pretrain(const TrainConfig& cfg, const Manifest& manifest,
                        const DatasetStats& stats, const std::string& out_dir,
                        const std::string& resume_path) {
  if (manifest.empty()) throw UserError("pretrain: empty manifest");
  const int skipped = static_cast<int>(manifest.size()) % cfg.batch_size;
  if (skipped != 0) {
    spdlog::info("dropping final partial batch of {} clips each epoch", skipped);
  }
  return pretrain_clips(cfg, load_clips(manifest, cfg.mel), stats, out_dir, resume_path);
}

}  // namespace abt
