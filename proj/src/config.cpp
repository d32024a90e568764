// Copyright (c) 2026 The abt Authors
// SPDX-License-Identifier: Apache-2.0

#include "abt/config.hpp"

#include <fstream>
#include <set>

#include "abt/common.hpp"

using nlohmann::json;

namespace abt {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw UserError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw UserError("unknown config key '" + section + "." + key + "'");
    }
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json mel_config_to_json(const MelConfig& c) {
  return {{"sample_rate_hz", c.sample_rate_hz}, {"window_ms", c.window_ms},
          {"hop_ms", c.hop_ms},                 {"n_mels", c.n_mels},
          {"fmin_hz", c.fmin_hz},               {"fmax_hz", c.fmax_hz},
          {"log_floor", c.log_floor}};
}

MelConfig mel_config_from_json(const json& j) {
  check_keys(j, {"sample_rate_hz", "window_ms", "hop_ms", "n_mels", "fmin_hz", "fmax_hz",
                 "log_floor"},
             "mel");
  MelConfig c;
  get_if(j, "sample_rate_hz", c.sample_rate_hz);
  get_if(j, "window_ms", c.window_ms);
  get_if(j, "hop_ms", c.hop_ms);
  get_if(j, "n_mels", c.n_mels);
  get_if(j, "fmin_hz", c.fmin_hz);
  get_if(j, "fmax_hz", c.fmax_hz);
  get_if(j, "log_floor", c.log_floor);
  return c;
}

namespace {

json augment_to_json(const AugmentConfig& c) {
  return {{"use_mixup", c.use_mixup},
          {"mixup_alpha", c.mixup_alpha},
          {"mixup_queue_len", c.mixup_queue_len},
          {"use_rrc", c.use_rrc},
          {"rrc_freq_scale", {c.rrc_freq_lo, c.rrc_freq_hi}},
          {"rrc_time_scale", {c.rrc_time_lo, c.rrc_time_hi}},
          {"use_rlf", c.use_rlf},
          {"rlf_gain_range", {c.rlf_gain_lo, c.rlf_gain_hi}},
          {"use_noise", c.use_noise},
          {"noise_alpha", c.noise_alpha},
          {"norm_mode", c.norm_mode == NormMode::dataset ? "dataset" : "pre_post"}};
}

AugmentConfig augment_from_json(const json& j) {
  check_keys(j, {"use_mixup", "mixup_alpha", "mixup_queue_len", "use_rrc", "rrc_freq_scale",
                 "rrc_time_scale", "use_rlf", "rlf_gain_range", "use_noise", "noise_alpha",
                 "norm_mode"},
             "train.augment");
  AugmentConfig c;
  get_if(j, "use_mixup", c.use_mixup);
  get_if(j, "mixup_alpha", c.mixup_alpha);
  get_if(j, "mixup_queue_len", c.mixup_queue_len);
  get_if(j, "use_rrc", c.use_rrc);
  if (j.contains("rrc_freq_scale")) {
    c.rrc_freq_lo = j.at("rrc_freq_scale").at(0).get<double>();
    c.rrc_freq_hi = j.at("rrc_freq_scale").at(1).get<double>();
  }
  if (j.contains("rrc_time_scale")) {
    c.rrc_time_lo = j.at("rrc_time_scale").at(0).get<double>();
    c.rrc_time_hi = j.at("rrc_time_scale").at(1).get<double>();
  }
  get_if(j, "use_rlf", c.use_rlf);
  if (j.contains("rlf_gain_range")) {
    c.rlf_gain_lo = j.at("rlf_gain_range").at(0).get<double>();
    c.rlf_gain_hi = j.at("rlf_gain_range").at(1).get<double>();
  }
  get_if(j, "use_noise", c.use_noise);
  get_if(j, "noise_alpha", c.noise_alpha);
  if (j.contains("norm_mode")) {
    const auto mode = j.at("norm_mode").get<std::string>();
    if (mode == "dataset") c.norm_mode = NormMode::dataset;
    else if (mode == "pre_post") c.norm_mode = NormMode::pre_post;
    else throw UserError("train.augment.norm_mode must be 'dataset' or 'pre_post'");
  }
  return c;
}

json loss_to_json(const LossConfig& c) {
  return {{"alpha", c.alpha}, {"lambda", c.lambda}, {"std_floor", c.std_floor}};
}

LossConfig loss_from_json(const json& j) {
  check_keys(j, {"alpha", "lambda", "std_floor"}, "train.loss");
  LossConfig c;
  get_if(j, "alpha", c.alpha);
  get_if(j, "lambda", c.lambda);
  get_if(j, "std_floor", c.std_floor);
  return c;
}

json projector_to_json(const ProjectorConfig& c) {
  return {{"in_dim", c.in_dim},
          {"hidden_dim", c.hidden_dim},
          {"out_dim", c.out_dim},
          {"n_hidden_layers", c.n_hidden_layers}};
}

ProjectorConfig projector_from_json(const json& j) {
  check_keys(j, {"in_dim", "hidden_dim", "out_dim", "n_hidden_layers"}, "train.projector");
  ProjectorConfig c;
  c.in_dim = 0;  // derive from encoder unless given
  get_if(j, "in_dim", c.in_dim);
  get_if(j, "hidden_dim", c.hidden_dim);
  get_if(j, "out_dim", c.out_dim);
  get_if(j, "n_hidden_layers", c.n_hidden_layers);
  return c;
}

json audiontt_to_json(const AudioNTTConfig& c) {
  return {{"n_conv_blocks", c.n_conv_blocks},
          {"conv_channels", c.conv_channels},
          {"fc_width", c.fc_width},
          {"dropout", c.dropout}};
}

AudioNTTConfig audiontt_from_json(const json& j) {
  check_keys(j, {"n_conv_blocks", "conv_channels", "fc_width", "dropout"}, "train.audiontt");
  AudioNTTConfig c;
  get_if(j, "n_conv_blocks", c.n_conv_blocks);
  get_if(j, "conv_channels", c.conv_channels);
  get_if(j, "fc_width", c.fc_width);
  get_if(j, "dropout", c.dropout);
  return c;
}

json vit_to_json(const ViTConfig& c) {
  return {{"dim", c.dim},         {"depth", c.depth},
          {"heads", c.heads},     {"patch_h", c.patch_h},
          {"patch_w", c.patch_w}, {"mlp_ratio", c.mlp_ratio}};
}

ViTConfig vit_from_json(const json& j) {
  check_keys(j, {"size", "dim", "depth", "heads", "patch_h", "patch_w", "mlp_ratio"},
             "train.vit");
  ViTConfig c = ViTConfig::from_size('T');
  if (j.contains("size")) {
    const auto s = j.at("size").get<std::string>();
    if (s.size() != 1) throw UserError("train.vit.size must be one of B, S, T");
    c = ViTConfig::from_size(s[0]);
  }
  get_if(j, "dim", c.dim);
  get_if(j, "depth", c.depth);
  get_if(j, "heads", c.heads);
  get_if(j, "patch_h", c.patch_h);
  get_if(j, "patch_w", c.patch_w);
  get_if(j, "mlp_ratio", c.mlp_ratio);
  return c;
}

json masking_to_json(const MaskingConfig& c) {
  return {{"enabled", c.enabled},
          {"use_schedule", c.use_schedule},
          {"r", c.r},
          {"beta", c.beta},
          {"warmup_epochs", c.warmup_epochs}};
}

MaskingConfig masking_from_json(const json& j) {
  check_keys(j, {"enabled", "use_schedule", "r", "beta", "warmup_epochs"}, "train.masking");
  MaskingConfig c;
  get_if(j, "enabled", c.enabled);
  get_if(j, "use_schedule", c.use_schedule);
  get_if(j, "r", c.r);
  get_if(j, "beta", c.beta);
  get_if(j, "warmup_epochs", c.warmup_epochs);
  return c;
}

json lars_to_json(const LarsConfig& c) {
  return {{"lr_weights", c.lr_weights},
          {"lr_biases", c.lr_biases},
          {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},
          {"eta", c.eta}};
}

LarsConfig lars_from_json(const json& j) {
  check_keys(j, {"lr_weights", "lr_biases", "weight_decay", "momentum", "eta"}, "train.lars");
  LarsConfig c;
  get_if(j, "lr_weights", c.lr_weights);
  get_if(j, "lr_biases", c.lr_biases);
  get_if(j, "weight_decay", c.weight_decay);
  get_if(j, "momentum", c.momentum);
  get_if(j, "eta", c.eta);
  return c;
}

json adamw_to_json(const AdamWConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

AdamWConfig adamw_from_json(const json& j) {
  check_keys(j, {"lr", "weight_decay", "beta1", "beta2", "epsilon"}, "train.adamw");
  AdamWConfig c;
  get_if(j, "lr", c.lr);
  get_if(j, "weight_decay", c.weight_decay);
  get_if(j, "beta1", c.beta1);
  get_if(j, "beta2", c.beta2);
  get_if(j, "epsilon", c.epsilon);
  return c;
}

json sgd_to_json(const SgdConfig& c) {
  return {{"lr", c.lr}, {"momentum", c.momentum}, {"weight_decay", c.weight_decay}};
}

SgdConfig sgd_from_json(const json& j) {
  check_keys(j, {"lr", "momentum", "weight_decay"}, "train.sgd");
  SgdConfig c;
  get_if(j, "lr", c.lr);
  get_if(j, "momentum", c.momentum);
  get_if(j, "weight_decay", c.weight_decay);
  return c;
}

json probe_to_json(const ProbeRunConfig& c) {
  return {{"hidden_width", c.base.hidden_width},
          {"max_epochs", c.base.max_epochs},
          {"check_every", c.base.check_every},
          {"patience", c.base.patience},
          {"batch_size", c.base.batch_size},
          {"task_type", c.base.task_type == TaskType::multiclass ? "multiclass" : "multilabel"},
          {"train_frac", c.train_frac},
          {"val_frac", c.val_frac},
          {"split_seed", c.split_seed}};
}

ProbeRunConfig probe_from_json(const json& j) {
  check_keys(j, {"hidden_width", "max_epochs", "check_every", "patience", "batch_size",
                 "task_type", "train_frac", "val_frac", "split_seed"},
             "probe");
  ProbeRunConfig c;
  get_if(j, "hidden_width", c.base.hidden_width);
  get_if(j, "max_epochs", c.base.max_epochs);
  get_if(j, "check_every", c.base.check_every);
  get_if(j, "patience", c.base.patience);
  get_if(j, "batch_size", c.base.batch_size);
  if (j.contains("task_type")) {
    const auto t = j.at("task_type").get<std::string>();
    if (t == "multiclass") c.base.task_type = TaskType::multiclass;
    else if (t == "multilabel") c.base.task_type = TaskType::multilabel;
    else throw UserError("probe.task_type must be 'multiclass' or 'multilabel'");
  }
  get_if(j, "train_frac", c.train_frac);
  get_if(j, "val_frac", c.val_frac);
  get_if(j, "split_seed", c.split_seed);
  return c;
}

json paths_to_json(const PathsConfig& c) {
  return {{"manifest", c.manifest},     {"stats", c.stats},
          {"out_dir", c.out_dir},       {"checkpoint", c.checkpoint},
          {"embeddings", c.embeddings}, {"labels", c.labels}};
}

PathsConfig paths_from_json(const json& j) {
  check_keys(j, {"manifest", "stats", "out_dir", "checkpoint", "embeddings", "labels"},
             "paths");
  PathsConfig c;
  get_if(j, "manifest", c.manifest);
  get_if(j, "stats", c.stats);
  get_if(j, "out_dir", c.out_dir);
  get_if(j, "checkpoint", c.checkpoint);
  get_if(j, "embeddings", c.embeddings);
  get_if(j, "labels", c.labels);
  return c;
}

}  // namespace

json train_config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["encoder"] = c.encoder;
  j["audiontt"] = audiontt_to_json(c.audiontt);
  j["vit"] = vit_to_json(c.vit);
  j["projector"] = projector_to_json(c.projector);
  j["loss"] = loss_to_json(c.loss);
  j["augment"] = augment_to_json(c.augment);
  j["optimizer"] = c.optimizer;
  j["lars"] = lars_to_json(c.lars);
  j["adamw"] = adamw_to_json(c.adamw);
  j["sgd"] = sgd_to_json(c.sgd);
  j["crop_frames"] = c.crop_frames;
  j["masking"] = masking_to_json(c.masking);
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["precision"] = c.precision;
  j["mel"] = mel_config_to_json(c.mel);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, {"epochs", "batch_size", "encoder", "audiontt", "vit", "projector", "loss",
                 "augment", "optimizer", "lars", "adamw", "sgd", "crop_frames", "masking",
                 "seed", "checkpoint_every", "precision", "mel"},
             "train");
  TrainConfig c;
  get_if(j, "epochs", c.epochs);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "encoder", c.encoder);
  if (j.contains("audiontt")) c.audiontt = audiontt_from_json(j.at("audiontt"));
  if (j.contains("vit")) c.vit = vit_from_json(j.at("vit"));
  if (j.contains("projector")) c.projector = projector_from_json(j.at("projector"));
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  if (j.contains("augment")) c.augment = augment_from_json(j.at("augment"));
  get_if(j, "optimizer", c.optimizer);
  if (j.contains("lars")) c.lars = lars_from_json(j.at("lars"));
  if (j.contains("adamw")) c.adamw = adamw_from_json(j.at("adamw"));
  if (j.contains("sgd")) c.sgd = sgd_from_json(j.at("sgd"));
  get_if(j, "crop_frames", c.crop_frames);
  if (j.contains("masking")) c.masking = masking_from_json(j.at("masking"));
  get_if(j, "seed", c.seed);
  get_if(j, "checkpoint_every", c.checkpoint_every);
  get_if(j, "precision", c.precision);
  if (j.contains("mel")) c.mel = mel_config_from_json(j.at("mel"));
  c.audiontt.n_mels = c.mel.n_mels;
  c.vit.variant = c.encoder == "vit_c" ? "vit_c" : "vit";
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["train"] = train_config_to_json(c.train);
  j["probe"] = probe_to_json(c.probe);
  j["paths"] = paths_to_json(c.paths);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"train", "probe", "paths"}, "<root>");
  RunConfig c;
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("probe")) c.probe = probe_from_json(j.at("probe"));
  if (j.contains("paths")) c.paths = paths_from_json(j.at("paths"));
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read config: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UserError("invalid config JSON in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UserError("cannot write config: " + path);
  out << run_config_to_json(c).dump(2) << "\n";
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw UserError("override must look like section.key=value: " + assignment);
  }
  const std::string dotted = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json j = run_config_to_json(cfg);
  json* node = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (!node->contains(key)) throw UserError("unknown config key '" + dotted + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  // Parse the value with the original type as a guide.
  try {
    if (node->is_string()) *node = value;
    else *node = json::parse(value);
  } catch (const json::exception&) {
    throw UserError("cannot parse override value for '" + dotted + "': " + value);
  }
  cfg = run_config_from_json(j);
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a(run_config_to_json(cfg).dump()); }
uint64_t config_hash(const TrainConfig& cfg) { return fnv1a(train_config_to_json(cfg).dump()); }

}  // namespace abt
