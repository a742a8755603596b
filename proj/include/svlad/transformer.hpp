#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/graph.hpp"
#include "svlad/params.hpp"

namespace svlad {

// Post-norm encoder stack: self-attention, residual, LN, GELU feed-forward,
// residual, LN. Masked positions get -1e9 attention logits (weight underflows
// to exactly zero) and are zeroed in the output, so values stored at masked
// rows cannot reach any valid row.
struct TransformerSpec {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 0;  // 0 -> 4 * width
  double ln_eps = 1e-5;
};

namespace detail {
constexpr double kMaskLogit = -1e9;
}

inline void declare_transformer_params(std::vector<ParamDecl>& out, const std::string& prefix,
                                       std::size_t d, const TransformerSpec& spec) {
  const std::size_t ffn = spec.ffn_dim ? spec.ffn_dim : 4 * d;
  for (std::size_t i = 0; i < spec.layers; ++i) {
    const std::string lp = prefix + ".l" + std::to_string(i);
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
      out.push_back({lp + w, {d, d}, ParamInit::UniformFanIn, d});
    for (const char* b : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"})
      out.push_back({lp + b, {d}, ParamInit::Zero});
    out.push_back({lp + ".ln1.gamma", {d}, ParamInit::One});
    out.push_back({lp + ".ln1.beta", {d}, ParamInit::Zero});
    out.push_back({lp + ".ffn.w1", {d, ffn}, ParamInit::UniformFanIn, d});
    out.push_back({lp + ".ffn.b1", {ffn}, ParamInit::Zero});
    out.push_back({lp + ".ffn.w2", {ffn, d}, ParamInit::UniformFanIn, ffn});
    out.push_back({lp + ".ffn.b2", {d}, ParamInit::Zero});
    out.push_back({lp + ".ln2.gamma", {d}, ParamInit::One});
    out.push_back({lp + ".ln2.beta", {d}, ParamInit::Zero});
  }
}

inline Var transformer_encoder(Graph& g, ParamBinder& p, const std::string& prefix, Var x,
                               const std::vector<bool>& mask, const TransformerSpec& spec) {
  const Tensor& xv = g.value(x);
  require_rank2(xv, "transformer input");
  const std::size_t n = xv.rows(), d = xv.cols();
  if (mask.size() != n) throw ShapeError("mask length does not match sequence length");
  std::size_t nv = 0;
  for (bool b : mask) nv += b;
  if (nv == 0) throw EmptySequenceError("transformer over a fully masked sequence");
  if (spec.heads == 0 || d % spec.heads != 0)
    throw ConfigError("hidden size " + std::to_string(d) + " not divisible by " +
                      std::to_string(spec.heads) + " heads");
  const std::size_t dh = d / spec.heads;

  Tensor key_bias({n, n});
  for (std::size_t j = 0; j < n; ++j)
    if (!mask[j])
      for (std::size_t i = 0; i < n; ++i) key_bias.at(i, j) = detail::kMaskLogit;
  Tensor row_mask({n, d});
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i])
      for (std::size_t j = 0; j < d; ++j) row_mask.at(i, j) = 1.0;

  Var h = x;
  for (std::size_t layer = 0; layer < spec.layers; ++layer) {
    const std::string lp = prefix + ".l" + std::to_string(layer);
    Var q = g.linear(h, p(lp + ".attn.wq"), p(lp + ".attn.bq"));
    Var k = g.linear(h, p(lp + ".attn.wk"), p(lp + ".attn.bk"));
    Var v = g.linear(h, p(lp + ".attn.wv"), p(lp + ".attn.bv"));
    std::vector<Var> head_out;
    head_out.reserve(spec.heads);
    for (std::size_t hh = 0; hh < spec.heads; ++hh) {
      const std::size_t c0 = hh * dh, c1 = c0 + dh;
      Var qi = g.col_slice(q, c0, c1);
      Var ki = g.col_slice(k, c0, c1);
      Var vi = g.col_slice(v, c0, c1);
      Var scores = g.scale(g.matmul(qi, g.transpose(ki)), 1.0 / std::sqrt(static_cast<double>(dh)));
      Var att = g.softmax_rows(g.add_const(scores, key_bias));
      head_out.push_back(g.matmul(att, vi));
    }
    Var cat = head_out.size() == 1 ? head_out[0] : g.concat_cols(head_out);
    Var att_out = g.linear(cat, p(lp + ".attn.wo"), p(lp + ".attn.bo"));
    h = g.layer_norm_rows(g.add(h, att_out), p(lp + ".ln1.gamma"), p(lp + ".ln1.beta"), spec.ln_eps);
    Var ff = g.linear(g.gelu(g.linear(h, p(lp + ".ffn.w1"), p(lp + ".ffn.b1"))), p(lp + ".ffn.w2"),
                      p(lp + ".ffn.b2"));
    h = g.layer_norm_rows(g.add(h, ff), p(lp + ".ln2.gamma"), p(lp + ".ln2.beta"), spec.ln_eps);
  }
  return g.mul_const(h, row_mask);
}

}  // namespace svlad
