#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "svlad/encoders.hpp"
#include "svlad/errors.hpp"
#include "svlad/graph.hpp"
#include "svlad/params.hpp"
#include "svlad/pooling.hpp"
#include "svlad/transformer.hpp"
#include "svlad/vlad.hpp"

namespace svlad {

enum class Task { Regression, Classification, Multilabel };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::Regression: return "regression";
    case Task::Classification: return "classification";
    case Task::Multilabel: return "multilabel";
  }
  return "?";
}

// One label of whichever kind the task requires.
struct Label {
  Task kind = Task::Regression;
  double score = 0.0;              // regression
  std::size_t cls = 0;             // classification
  std::array<int, 4> bits{};       // multilabel emotions

  static Label regression(double s) { return {Task::Regression, s, 0, {}}; }
  static Label classification(std::size_t c) { return {Task::Classification, 0.0, c, {}}; }
  static Label multilabel(std::array<int, 4> b) { return {Task::Multilabel, 0.0, 0, b}; }
};

// Compact (valid-rows-only) model input. Masks default to all-true; tests
// feed padded rows with explicit masks to pin down masking behavior.
struct PreparedSample {
  std::string id;
  std::vector<std::size_t> tokens;  // token-text path
  Tensor text_feats;                // feature-text path, [n x d_t]
  Tensor video;                     // [n x d_v_raw]
  Tensor audio;                     // [n x d_a_raw]
  Label label;
  std::vector<bool> text_mask, video_mask, audio_mask;  // empty -> all valid
};

struct ModelConfig {
  std::size_t d_s = 128;
  std::vector<std::size_t> scales{1};
  std::size_t K = 8;
  std::size_t fusion_layers = 2;
  std::size_t fusion_heads = 4;
  std::size_t fusion_ffn = 0;  // 0 -> 4 * d_s
  double ln_eps = 1e-5;
  double l2_eps = 1e-12;
  Task task = Task::Regression;
  std::size_t classes = 1;  // 1 regression, #classes classification, 8 multilabel
  bool token_text = true;
  EncoderConfig text, video, audio;
};

inline std::size_t fusion_row_count(const ModelConfig& cfg) { return 3 * cfg.scales.size() + 3; }

inline void validate_model_config(const ModelConfig& cfg) {
  if (cfg.d_s == 0 || cfg.K == 0) throw ConfigError("d_s and K must be positive");
  if (cfg.scales.empty()) throw ConfigError("at least one scale required");
  for (std::size_t i = 0; i < cfg.scales.size(); ++i) {
    if (cfg.scales[i] == 0) throw ConfigError("scales must be positive");
    if (i > 0 && cfg.scales[i] <= cfg.scales[i - 1])
      throw ConfigError("scales must be strictly increasing");
  }
  if (cfg.scales.front() != 1) throw ConfigError("scale set must contain 1");
  if (cfg.fusion_heads == 0 || cfg.d_s % cfg.fusion_heads != 0)
    throw ConfigError("d_s not divisible by fusion head count");
  switch (cfg.task) {
    case Task::Regression:
      if (cfg.classes != 1) throw ConfigError("regression head must have one output");
      break;
    case Task::Classification:
      if (cfg.classes < 2) throw ConfigError("classification needs >= 2 classes");
      break;
    case Task::Multilabel:
      if (cfg.classes != 8) throw ConfigError("multilabel head is 4 emotions x 2 logits");
      break;
  }
  validate_encoder_config(cfg.text, cfg.d_s);
  validate_encoder_config(cfg.video, cfg.d_s);
  validate_encoder_config(cfg.audio, cfg.d_s);
  if (!cfg.token_text && cfg.text.input_dim != cfg.text.hidden_dim)
    throw ConfigError("precomputed text features must arrive at hidden width");
}

inline TransformerSpec fusion_spec(const ModelConfig& cfg) {
  return TransformerSpec{cfg.fusion_layers, cfg.fusion_heads, cfg.fusion_ffn, cfg.ln_eps};
}

inline std::vector<ParamDecl> declare_model_params(const ModelConfig& cfg) {
  validate_model_config(cfg);
  std::vector<ParamDecl> decls;
  declare_encoder_params(decls, "text", cfg.text, cfg.token_text, cfg.d_s, cfg.ln_eps);
  declare_encoder_params(decls, "video", cfg.video, false, cfg.d_s, cfg.ln_eps);
  declare_encoder_params(decls, "audio", cfg.audio, false, cfg.d_s, cfg.ln_eps);
  declare_shared_vectors(decls, cfg.K, cfg.d_s);
  for (Modality m : {Modality::Text, Modality::Video, Modality::Audio})
    declare_vlad_projection(decls, m, cfg.K, cfg.d_s);
  // slot embeddings start at zero: row identity is learned, and a fresh model
  // reproduces plain R through an empty fusion stack
  decls.push_back({"fusion.slot", {fusion_row_count(cfg), cfg.d_s}, ParamInit::Zero});
  declare_transformer_params(decls, "fusion", cfg.d_s, fusion_spec(cfg));
  decls.push_back({"head.w", {cfg.d_s, cfg.classes}, ParamInit::UniformFanIn, cfg.d_s});
  decls.push_back({"head.b", {cfg.classes}, ParamInit::Zero});
  return decls;
}

inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  return materialize_params(declare_model_params(cfg), seed);
}

// Assignment weights (and aggregated rows) recorded during a forward pass,
// for inspection dumps and invariant checks.
struct VladCaptureEntry {
  Modality modality;
  std::size_t scale;
  Tensor weights;     // [n' x K]
  Tensor aggregated;  // [K x d_s], rows unit-norm or zero
};

struct ForwardResult {
  Var output;  // [1 x classes]
  Var fused;   // [1 x d_s], the max-pooled fusion feature
  std::vector<RowTag> tags;
};

namespace detail {

inline std::vector<bool> mask_or_all(const std::vector<bool>& m, std::size_t n) {
  return m.empty() ? std::vector<bool>(n, true) : m;
}

}  // namespace detail

inline ForwardResult fuse_and_predict(Graph& g, ParamBinder& p, const ModelConfig& cfg,
                                      const FusionMatrix& R);

// Full forward pass for one sample: encoders -> common projection ->
// per-scale pooling + VLAD against the shared anchors -> per-modality
// projection -> fusion matrix (+ slot embeddings) -> fusion transformer ->
// per-dimension max -> output head.
inline ForwardResult model_forward(Graph& g, ParamBinder& p, const ModelConfig& cfg,
                                   const PreparedSample& s,
                                   std::vector<VladCaptureEntry>* capture = nullptr) {
  // unimodal encoders at hidden width
  std::vector<bool> tmask, vmask, amask;
  Var ft, fv, fa;
  if (cfg.token_text) {
    if (s.tokens.empty()) throw EmptySequenceError("sample " + s.id + ": empty text");
    tmask = detail::mask_or_all(s.text_mask, s.tokens.size());
    ft = encode_text_tokens(g, p, cfg.text, s.tokens, tmask, s.id, cfg.ln_eps);
    if (tmask.size() > cfg.text.max_len) tmask.resize(cfg.text.max_len);
  } else {
    tmask = detail::mask_or_all(s.text_mask, s.text_feats.empty() ? 0 : s.text_feats.rows());
    ft = encode_features(g, p, "text", cfg.text, s.text_feats, tmask, s.id, cfg.ln_eps);
    if (tmask.size() > cfg.text.max_len) tmask.resize(cfg.text.max_len);
  }
  vmask = detail::mask_or_all(s.video_mask, s.video.empty() ? 0 : s.video.rows());
  fv = encode_features(g, p, "video", cfg.video, s.video, vmask, s.id, cfg.ln_eps);
  if (vmask.size() > cfg.video.max_len) vmask.resize(cfg.video.max_len);
  amask = detail::mask_or_all(s.audio_mask, s.audio.empty() ? 0 : s.audio.rows());
  fa = encode_features(g, p, "audio", cfg.audio, s.audio, amask, s.id, cfg.ln_eps);
  if (amask.size() > cfg.audio.max_len) amask.resize(cfg.audio.max_len);

  // common width d_s
  struct Stream {
    Modality m;
    Var F;
    const std::vector<bool>* mask;
  };
  Var pt = project_common(g, p, "text", ft, cfg.text, cfg.d_s);
  Var pv = project_common(g, p, "video", fv, cfg.video, cfg.d_s);
  Var pa = project_common(g, p, "audio", fa, cfg.audio, cfg.d_s);
  const std::array<Stream, 3> streams{Stream{Modality::Text, pt, &tmask},
                                      Stream{Modality::Video, pv, &vmask},
                                      Stream{Modality::Audio, pa, &amask}};

  Var c = p(SharedVectorNames::c);
  Var c_hat = p(SharedVectorNames::c_hat);
  Var b = p(SharedVectorNames::b);

  std::vector<Var> rows;
  rows.reserve(fusion_row_count(cfg));
  for (std::size_t scale : cfg.scales) {
    for (const Stream& st : streams) {
      PooledSeq pooled = mean_pool_windows(g, st.F, *st.mask, scale);
      Var w = vlad_assign(g, pooled.values, c, b);
      Var r = vlad_aggregate(g, pooled.values, w, c_hat, cfg.l2_eps);
      if (capture) capture->push_back({st.m, scale, g.value(w), g.value(r)});
      rows.push_back(vlad_project(g, p, st.m, r, cfg.ln_eps));
    }
  }
  for (const Stream& st : streams) rows.push_back(g.masked_mean_rows(st.F, *st.mask));

  FusionMatrix R{g.concat_rows(rows), fusion_row_tags(cfg.scales)};
  return fuse_and_predict(g, p, cfg, R);
}

// Fusion transformer over R (+ learned slot embeddings), per-dimension max
// pooling, and the output head.
inline ForwardResult fuse_and_predict(Graph& g, ParamBinder& p, const ModelConfig& cfg,
                                      const FusionMatrix& R) {
  const Tensor& rv = g.value(R.rows);
  require_rank2(rv, "fusion matrix");
  if (R.tags.size() != rv.rows()) throw InternalError("fusion matrix rows and tags disagree");
  const Tensor& slot = g.value(p("fusion.slot"));
  if (!slot.same_shape(rv))
    throw InternalError("slot embedding shape " + shape_str(slot.shape()) +
                        " does not match fusion matrix " + shape_str(rv.shape()));
  Var x = g.add(R.rows, p("fusion.slot"));
  Var encoded = transformer_encoder(g, p, "fusion", x, std::vector<bool>(rv.rows(), true),
                                    fusion_spec(cfg));
  ForwardResult out;
  out.fused = g.max_over_rows(encoded);
  out.output = g.linear(out.fused, p("head.w"), p("head.b"));
  out.tags = R.tags;
  return out;
}

// Per-sample task loss. Classification: cross-entropy over class logits;
// regression: squared error; multilabel: summed two-way cross-entropies over
// the four emotion logit pairs.
inline Var task_loss(Graph& g, Var output, const Label& label, Task task) {
  if (label.kind != task)
    throw DataError(std::string("label kind '") + task_name(label.kind) +
                    "' does not match task '" + task_name(task) + "'");
  const Tensor& o = g.value(output);
  switch (task) {
    case Task::Regression:
      return g.squared_error(output, label.score);
    case Task::Classification: {
      if (label.cls >= o.size()) throw DataError("class label out of range");
      return g.cross_entropy_rows(output, {label.cls});
    }
    case Task::Multilabel: {
      if (o.size() != 8) throw ShapeError("multilabel head must emit 8 logits");
      Var pairs = g.reshape(output, Shape{4, 2});
      std::vector<std::size_t> targets(4);
      for (std::size_t e = 0; e < 4; ++e) {
        if (label.bits[e] != 0 && label.bits[e] != 1) throw DataError("emotion bits must be 0/1");
        targets[e] = static_cast<std::size_t>(label.bits[e]);
      }
      return g.cross_entropy_rows(pairs, targets);
    }
  }
  throw InternalError("unreachable task");
}

}  // namespace svlad
