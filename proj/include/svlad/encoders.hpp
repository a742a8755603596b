#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/graph.hpp"
#include "svlad/params.hpp"
#include "svlad/transformer.hpp"

namespace svlad {

enum class Modality { Text, Video, Audio };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Text: return "T";
    case Modality::Video: return "V";
    case Modality::Audio: return "A";
  }
  return "?";
}

struct EncoderConfig {
  Modality modality = Modality::Text;
  std::size_t input_dim = 0;   // vocab size for token text, raw feature width otherwise
  std::size_t hidden_dim = 0;  // d_t / d_v / d_a
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_len = 64;
  std::size_t ffn_dim = 0;  // 0 -> 4 * hidden
  bool project = true;      // map hidden -> d_s after encoding
};

inline void validate_encoder_config(const EncoderConfig& cfg, std::size_t d_s) {
  if (cfg.input_dim == 0 || cfg.hidden_dim == 0 || cfg.heads == 0 || cfg.max_len == 0)
    throw ConfigError("encoder dimensions must be positive");
  if (cfg.hidden_dim % cfg.heads != 0)
    throw ConfigError("hidden size " + std::to_string(cfg.hidden_dim) +
                      " not divisible by heads " + std::to_string(cfg.heads));
  if (cfg.modality != Modality::Text && cfg.layers != 2 && cfg.layers != 4 && cfg.layers != 6)
    throw ConfigError("video/audio encoder layer count must be one of {2,4,6}");
  if (!cfg.project && cfg.hidden_dim != d_s)
    throw ConfigError("projection bypass requires hidden size == d_s");
}

inline TransformerSpec encoder_spec(const EncoderConfig& cfg, double ln_eps) {
  return TransformerSpec{cfg.layers, cfg.heads, cfg.ffn_dim, ln_eps};
}

inline void declare_encoder_params(std::vector<ParamDecl>& out, const std::string& prefix,
                                   const EncoderConfig& cfg, bool token_text, std::size_t d_s,
                                   double ln_eps) {
  if (cfg.modality == Modality::Text && token_text)
    out.push_back({prefix + ".embed", {cfg.input_dim, cfg.hidden_dim}, ParamInit::UnitVariance});
  if (cfg.modality != Modality::Text)
    out.push_back({prefix + ".in.w", {cfg.input_dim, cfg.hidden_dim}, ParamInit::UniformFanIn,
                   cfg.input_dim});
  if (cfg.modality != Modality::Text) out.push_back({prefix + ".in.b", {cfg.hidden_dim}, ParamInit::Zero});
  // positions start at zero so an empty stack reproduces the embeddings
  out.push_back({prefix + ".pos", {cfg.max_len, cfg.hidden_dim}, ParamInit::Zero});
  declare_transformer_params(out, prefix, cfg.hidden_dim, encoder_spec(cfg, ln_eps));
  if (cfg.project) {
    out.push_back({prefix + ".proj.w", {cfg.hidden_dim, d_s}, ParamInit::UniformFanIn, cfg.hidden_dim});
    out.push_back({prefix + ".proj.b", {d_s}, ParamInit::Zero});
  }
}

namespace detail {

inline Var add_positions(Graph& g, ParamBinder& p, const std::string& prefix, Var x,
                         std::size_t n) {
  std::vector<std::size_t> iota(n);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  return g.add(x, g.gather_rows(p(prefix + ".pos"), iota));
}

}  // namespace detail

// Token-id path: embedding lookup + positions -> transformer. Sequences
// longer than max_len are truncated together with their mask.
inline Var encode_text_tokens(Graph& g, ParamBinder& p, const EncoderConfig& cfg,
                              std::vector<std::size_t> token_ids, std::vector<bool> mask,
                              const std::string& sample_id, double ln_eps) {
  if (token_ids.size() != mask.size()) throw ShapeError("token/mask length mismatch");
  if (token_ids.size() > cfg.max_len) {
    token_ids.resize(cfg.max_len);
    mask.resize(cfg.max_len);
  }
  for (std::size_t id : token_ids)
    if (id >= cfg.input_dim)
      throw DataError("sample " + sample_id + ": token id " + std::to_string(id) +
                      " outside vocabulary of size " + std::to_string(cfg.input_dim));
  std::size_t nv = 0;
  for (bool b : mask) nv += b;
  if (nv == 0) throw EmptySequenceError("sample " + sample_id + ": no valid text tokens");
  Var x = g.gather_rows(p("text.embed"), token_ids);
  x = detail::add_positions(g, p, "text", x, token_ids.size());
  return transformer_encoder(g, p, "text", x, mask, encoder_spec(cfg, ln_eps));
}

// Feature path: optional input projection to hidden size + positions ->
// transformer. Used for video, audio, and precomputed text features (the
// latter skip the projection, so their width must equal hidden_dim).
inline Var encode_features(Graph& g, ParamBinder& p, const std::string& prefix,
                           const EncoderConfig& cfg, const Tensor& raw, std::vector<bool> mask,
                           const std::string& sample_id, double ln_eps) {
  require_rank2(raw, "encoder feature input");
  if (raw.cols() != cfg.input_dim)
    throw DataError("sample " + sample_id + ": " + prefix + " feature width " +
                    std::to_string(raw.cols()) + " does not match configured " +
                    std::to_string(cfg.input_dim));
  if (raw.rows() != mask.size()) throw ShapeError("feature/mask length mismatch");
  Tensor rows = raw;
  if (rows.rows() > cfg.max_len) {
    Tensor cut({cfg.max_len, rows.cols()});
    std::copy(rows.data(), rows.data() + cut.size(), cut.data());
    rows = std::move(cut);
    mask.resize(cfg.max_len);
  }
  std::size_t nv = 0;
  for (bool b : mask) nv += b;
  if (nv == 0) throw EmptySequenceError("sample " + sample_id + ": no valid " + prefix + " frames");
  Var x = g.constant(rows);
  if (cfg.modality != Modality::Text) x = g.linear(x, p(prefix + ".in.w"), p(prefix + ".in.b"));
  else if (cfg.input_dim != cfg.hidden_dim)
    throw ConfigError("precomputed text features must match hidden size");
  x = detail::add_positions(g, p, prefix, x, mask.size());
  return transformer_encoder(g, p, prefix, x, mask, encoder_spec(cfg, ln_eps));
}

// Maps hidden width to the common fusion width d_s; identity bypass when the
// config requests no projection (only legal when widths already agree).
inline Var project_common(Graph& g, ParamBinder& p, const std::string& prefix, Var F,
                          const EncoderConfig& cfg, std::size_t d_s) {
  const Tensor& f = g.value(F);
  require_rank2(f, "project_common input");
  if (f.cols() != cfg.hidden_dim)
    throw ConfigError("project_common: input width " + std::to_string(f.cols()) +
                      " does not match hidden size " + std::to_string(cfg.hidden_dim));
  if (!cfg.project) {
    if (cfg.hidden_dim != d_s) throw ConfigError("projection bypass requires hidden == d_s");
    return F;
  }
  return g.linear(F, p(prefix + ".proj.w"), p(prefix + ".proj.b"));
}

}  // namespace svlad
