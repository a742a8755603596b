#pragma once

#include <cmath>
#include <map>
#include <string>

#include "svlad/errors.hpp"
#include "svlad/params.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

using GradMap = std::map<std::string, Tensor>;

// Linear warmup to peak over warmup_fraction of the run, then linear decay
// to zero at total_steps. Continuous and piecewise-linear in step.
inline double lr_at(double step, double total_steps, double peak_lr, double warmup_fraction) {
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw ConfigError("warmup fraction must lie in (0, 1)");
  if (peak_lr <= 0.0) throw ConfigError("peak learning rate must be positive");
  if (step < 0.0 || step > total_steps) throw ConfigError("step outside [0, total_steps]");
  const double warm = warmup_fraction * total_steps;
  if (step <= warm) return peak_lr * (warm > 0.0 ? step / warm : 1.0);
  return peak_lr * (total_steps - step) / (total_steps - warm);
}

inline double global_grad_norm(const GradMap& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  return std::sqrt(sq);
}

// Scales all gradients so the global norm does not exceed max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(GradMap& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale;
  }
  return norm;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  GradMap m, v;
  std::uint64_t t = 0;
};

// Standard Adam with bias correction. Gradients must be keyed exactly like
// the parameters.
inline void adam_step(ModelParams& params, const GradMap& grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (grads.size() != params.size())
    throw InternalError("gradient map has " + std::to_string(grads.size()) + " entries, expected " +
                        std::to_string(params.size()));
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace(name, Tensor(p.shape()));
      state.v.emplace(name, Tensor(p.shape()));
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) throw InternalError("missing gradient for parameter " + name);
    const Tensor& g = git->second;
    check_same_shape(p, g, "adam gradient");
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace svlad
