#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "svlad/encoders.hpp"
#include "svlad/errors.hpp"
#include "svlad/graph.hpp"
#include "svlad/params.hpp"

namespace svlad {

// The K shared semantic anchors: c (assignment), c_hat (residual), b (bias).
// One set exists per model; every modality and every scale binds the same
// three leaves.
struct SharedVectorNames {
  static constexpr const char* c = "vlad.c";
  static constexpr const char* c_hat = "vlad.c_hat";
  static constexpr const char* b = "vlad.b";
};

inline void declare_shared_vectors(std::vector<ParamDecl>& out, std::size_t K, std::size_t d_s) {
  out.push_back({SharedVectorNames::c, {K, d_s}, ParamInit::UniformFanIn, d_s});
  out.push_back({SharedVectorNames::c_hat, {K, d_s}, ParamInit::UniformFanIn, d_s});
  out.push_back({SharedVectorNames::b, {K}, ParamInit::Zero});
}

// w[i][j] = softmax_j(f_i . c_j + b_j); every row sums to 1.
inline Var vlad_assign(Graph& g, Var pooled, Var c, Var b) {
  const Tensor &f = g.value(pooled), &cv = g.value(c);
  require_rank2(f, "vlad_assign features");
  if (f.cols() != cv.cols())
    throw ShapeError("vlad_assign: feature width " + std::to_string(f.cols()) +
                     " != anchor width " + std::to_string(cv.cols()));
  return g.softmax_rows(g.linear(pooled, g.transpose(c), b));
}

// r_hat_j = sum_i w[i][j] (f_i - c_hat_j), then each row l2-normalized.
// The residual sum factors into w^T F - diag(colsum(w)) C_hat.
inline Var vlad_aggregate(Graph& g, Var pooled, Var w, Var c_hat, double l2_eps = 1e-12) {
  const Tensor &f = g.value(pooled), &wv = g.value(w), &ch = g.value(c_hat);
  if (wv.rows() != f.rows())
    throw ShapeError("vlad_aggregate: one weight row per token required");
  if (wv.cols() != ch.rows())
    throw ShapeError("vlad_aggregate: weight columns must match anchor count");
  Var summed = g.matmul(g.transpose(w), pooled);          // [K x d_s]
  Var mass = g.col_sums(w);                               // [K]
  Var anchored = g.scale_rows(c_hat, mass);               // [K x d_s]
  return g.l2_normalize_rows(g.sub(summed, anchored), l2_eps);
}

inline void declare_vlad_projection(std::vector<ParamDecl>& out, Modality m, std::size_t K,
                                    std::size_t d_s) {
  const std::string prefix = std::string("vlad.proj.") + modality_name(m);
  out.push_back({prefix + ".w", {K * d_s, d_s}, ParamInit::UniformFanIn, K * d_s});
  out.push_back({prefix + ".b", {d_s}, ParamInit::Zero});
  out.push_back({prefix + ".ln.gamma", {d_s}, ParamInit::One});
  out.push_back({prefix + ".ln.beta", {d_s}, ParamInit::Zero});
}

// u = LN(GELU(flatten(r) W_M + b_M)); one (W_M, b_M) per modality, shared by
// that modality's scales. flatten is row-major over (anchor, feature).
inline Var vlad_project(Graph& g, ParamBinder& p, Modality m, Var r, double ln_eps) {
  const Tensor& rv = g.value(r);
  require_rank2(rv, "vlad_project input");
  const std::string prefix = std::string("vlad.proj.") + modality_name(m);
  Var flat = g.reshape(r, Shape{1, rv.rows() * rv.cols()});
  Var u = g.gelu(g.linear(flat, p(prefix + ".w"), p(prefix + ".b")));
  return g.layer_norm_rows(u, p(prefix + ".ln.gamma"), p(prefix + ".ln.beta"), ln_eps);
}

// Identity of one row of the fusion matrix R: a (modality, scale) aggregate
// or a modality mean row.
struct RowTag {
  Modality modality = Modality::Text;
  std::size_t scale = 0;  // 0 for mean rows
  bool is_mean = false;
};

inline std::string format_row_tag(const RowTag& t) {
  return std::string(modality_name(t.modality)) + "@" + (t.is_mean ? "mean" : std::to_string(t.scale));
}

inline RowTag parse_row_tag(const std::string& s) {
  const auto at = s.find('@');
  if (s.size() < 3 || at != 1) throw DataError("malformed row tag: " + s);
  RowTag t;
  switch (s[0]) {
    case 'T': t.modality = Modality::Text; break;
    case 'V': t.modality = Modality::Video; break;
    case 'A': t.modality = Modality::Audio; break;
    default: throw DataError("malformed row tag: " + s);
  }
  const std::string rest = s.substr(2);
  if (rest == "mean") {
    t.is_mean = true;
  } else {
    t.scale = static_cast<std::size_t>(std::stoul(rest));
    if (t.scale == 0) throw DataError("malformed row tag: " + s);
  }
  return t;
}

// Fixed row order of R: per scale the (T, V, A) triplet, then the three
// modality mean rows; 3*|scales|+3 rows in total.
inline std::vector<RowTag> fusion_row_tags(const std::vector<std::size_t>& scales) {
  std::vector<RowTag> tags;
  tags.reserve(3 * scales.size() + 3);
  for (std::size_t s : scales)
    for (Modality m : {Modality::Text, Modality::Video, Modality::Audio})
      tags.push_back({m, s, false});
  for (Modality m : {Modality::Text, Modality::Video, Modality::Audio})
    tags.push_back({m, 0, true});
  return tags;
}

// Stacked fusion input with its row identities.
struct FusionMatrix {
  Var rows;                  // [(3*|scales|+3) x d_s]
  std::vector<RowTag> tags;
};

}  // namespace svlad
