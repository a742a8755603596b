#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svlad/data.hpp"
#include "svlad/errors.hpp"
#include "svlad/model.hpp"

namespace svlad {

// Everything a run needs, aggregated into one JSON document. Unknown keys are
// rejected anywhere in the tree; the canonical serialization (sorted keys)
// is hashed into every output artifact.
struct RunConfig {
  std::string manifest;
  std::string out_dir;
  Task task = Task::Classification;
  std::uint64_t seed = 1;

  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.1;
  double grad_clip = 1.0;  // 0 disables clipping

  // model block (input widths and class counts resolve against the dataset)
  std::size_t d_s = 128;
  std::vector<std::size_t> scales{1, 2, 3, 10};
  std::size_t K = 8;
  std::size_t fusion_layers = 2, fusion_heads = 4, fusion_ffn = 0;

  struct EncoderBlock {
    std::size_t layers = 2, hidden = 128, heads = 4, max_len = 64, ffn = 0;
    bool project = true;
  };
  EncoderBlock text, video, audio;

  bool s3c_enabled = false;
  std::vector<std::size_t> cluster_counts{10, 15};
  std::size_t s3c_start_epoch = 5;
  std::size_t kmeans_iters = 25;
  std::uint64_t kmeans_seed = 1;
  double s3c_coeff = 1.0;
  std::size_t s3c_refresh_every = 1;  // epochs between re-clusterings
};

namespace detail {

inline RunConfig::EncoderBlock parse_encoder_block(const nlohmann::json& j,
                                                   const std::string& where) {
  reject_unknown_keys(j, {"layers", "hidden", "heads", "max_len", "ffn", "project"}, where);
  RunConfig::EncoderBlock b;
  b.layers = j.at("layers").get<std::size_t>();
  b.hidden = j.at("hidden").get<std::size_t>();
  b.heads = j.at("heads").get<std::size_t>();
  b.max_len = j.at("max_len").get<std::size_t>();
  if (j.contains("ffn")) b.ffn = j.at("ffn").get<std::size_t>();
  if (j.contains("project")) b.project = j.at("project").get<bool>();
  return b;
}

inline nlohmann::json encoder_block_json(const RunConfig::EncoderBlock& b) {
  return nlohmann::json{{"layers", b.layers}, {"hidden", b.hidden},   {"heads", b.heads},
                        {"max_len", b.max_len}, {"ffn", b.ffn},       {"project", b.project}};
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"manifest", "out_dir", "task", "seed", "epochs", "batch_size", "peak_lr",
       "warmup_fraction", "grad_clip", "model", "s3c"},
      "config");
  RunConfig cfg;
  cfg.manifest = j.at("manifest").get<std::string>();
  cfg.out_dir = j.value("out_dir", std::string{});
  const std::string task = j.at("task").get<std::string>();
  if (task == "regression") cfg.task = Task::Regression;
  else if (task == "classification") cfg.task = Task::Classification;
  else if (task == "multilabel") cfg.task = Task::Multilabel;
  else throw ConfigError("config: unknown task '" + task + "'");
  cfg.seed = j.value("seed", std::uint64_t{1});
  cfg.epochs = j.at("epochs").get<std::size_t>();
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.peak_lr = j.at("peak_lr").get<double>();
  cfg.warmup_fraction = j.value("warmup_fraction", 0.1);
  cfg.grad_clip = j.value("grad_clip", 1.0);
  if (cfg.batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  if (!(cfg.warmup_fraction > 0.0 && cfg.warmup_fraction < 1.0))
    throw ConfigError("config: warmup_fraction must lie in (0, 1)");
  if (cfg.peak_lr <= 0.0) throw ConfigError("config: peak_lr must be positive");

  const auto& model = j.at("model");
  detail::reject_unknown_keys(
      model, {"d_s", "K", "scales", "fusion", "text", "video", "audio"}, "config.model");
  cfg.d_s = model.at("d_s").get<std::size_t>();
  cfg.K = model.at("K").get<std::size_t>();
  cfg.scales.clear();
  for (const auto& s : model.at("scales")) cfg.scales.push_back(s.get<std::size_t>());
  const auto& fusion = model.at("fusion");
  detail::reject_unknown_keys(fusion, {"layers", "heads", "ffn"}, "config.model.fusion");
  cfg.fusion_layers = fusion.at("layers").get<std::size_t>();
  cfg.fusion_heads = fusion.at("heads").get<std::size_t>();
  cfg.fusion_ffn = fusion.value("ffn", std::size_t{0});
  cfg.text = detail::parse_encoder_block(model.at("text"), "config.model.text");
  cfg.video = detail::parse_encoder_block(model.at("video"), "config.model.video");
  cfg.audio = detail::parse_encoder_block(model.at("audio"), "config.model.audio");

  if (j.contains("s3c") && !j.at("s3c").is_null()) {
    const auto& s3c = j.at("s3c");
    detail::reject_unknown_keys(
        s3c, {"clusters", "start_epoch", "kmeans_iters", "kmeans_seed", "coeff", "refresh_every"},
        "config.s3c");
    cfg.s3c_enabled = true;
    cfg.cluster_counts.clear();
    for (const auto& c : s3c.at("clusters")) cfg.cluster_counts.push_back(c.get<std::size_t>());
    if (cfg.cluster_counts.empty()) throw ConfigError("config.s3c: clusters must be nonempty");
    for (std::size_t c : cfg.cluster_counts)
      if (c < 2) throw ConfigError("config.s3c: every cluster count must be >= 2");
    cfg.s3c_start_epoch = s3c.at("start_epoch").get<std::size_t>();
    cfg.kmeans_iters = s3c.value("kmeans_iters", std::size_t{25});
    cfg.kmeans_seed = s3c.value("kmeans_seed", std::uint64_t{1});
    cfg.s3c_coeff = s3c.value("coeff", 1.0);
    cfg.s3c_refresh_every = s3c.value("refresh_every", std::size_t{1});
    if (cfg.kmeans_iters == 0 || cfg.s3c_refresh_every == 0)
      throw ConfigError("config.s3c: kmeans_iters and refresh_every must be >= 1");
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: invalid JSON (" + std::string(e.what()) + ")");
  }
  return parse_run_config(j);
}

// Canonical form: nlohmann keeps object keys sorted, so dump() is stable.
inline nlohmann::json run_config_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["manifest"] = cfg.manifest;
  j["out_dir"] = cfg.out_dir;
  j["task"] = task_name(cfg.task);
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["peak_lr"] = cfg.peak_lr;
  j["warmup_fraction"] = cfg.warmup_fraction;
  j["grad_clip"] = cfg.grad_clip;
  j["model"] = {{"d_s", cfg.d_s},
                {"K", cfg.K},
                {"scales", cfg.scales},
                {"fusion", {{"layers", cfg.fusion_layers}, {"heads", cfg.fusion_heads}, {"ffn", cfg.fusion_ffn}}},
                {"text", detail::encoder_block_json(cfg.text)},
                {"video", detail::encoder_block_json(cfg.video)},
                {"audio", detail::encoder_block_json(cfg.audio)}};
  if (cfg.s3c_enabled)
    j["s3c"] = {{"clusters", cfg.cluster_counts},   {"start_epoch", cfg.s3c_start_epoch},
                {"kmeans_iters", cfg.kmeans_iters}, {"kmeans_seed", cfg.kmeans_seed},
                {"coeff", cfg.s3c_coeff},           {"refresh_every", cfg.s3c_refresh_every}};
  else
    j["s3c"] = nullptr;
  return j;
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string canon = run_config_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash_hex(const RunConfig& cfg) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

// Resolves the model block against the dataset (input widths, vocab size,
// class count, token vs feature text).
inline ModelConfig resolve_model_config(const RunConfig& cfg, const DatasetInfo& info) {
  if (cfg.task != info.task)
    throw ConfigError(std::string("config task '") + task_name(cfg.task) +
                      "' does not match dataset task '" + task_name(info.task) + "'");
  ModelConfig m;
  m.d_s = cfg.d_s;
  m.K = cfg.K;
  m.scales = cfg.scales;
  m.fusion_layers = cfg.fusion_layers;
  m.fusion_heads = cfg.fusion_heads;
  m.fusion_ffn = cfg.fusion_ffn;
  m.task = cfg.task;
  m.classes = cfg.task == Task::Regression ? 1 : (cfg.task == Task::Classification ? info.num_classes : 8);
  m.token_text = info.token_text;

  auto fill = [](Modality mod, const RunConfig::EncoderBlock& b, std::size_t input_dim) {
    EncoderConfig e;
    e.modality = mod;
    e.input_dim = input_dim;
    e.hidden_dim = b.hidden;
    e.layers = b.layers;
    e.heads = b.heads;
    e.max_len = b.max_len;
    e.ffn_dim = b.ffn;
    e.project = b.project;
    return e;
  };
  m.text = fill(Modality::Text, cfg.text, info.token_text ? info.vocab.size() : info.text_dim);
  m.video = fill(Modality::Video, cfg.video, info.video_dim);
  m.audio = fill(Modality::Audio, cfg.audio, info.audio_dim);
  validate_model_config(m);
  return m;
}

}  // namespace svlad
