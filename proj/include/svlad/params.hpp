#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/graph.hpp"
#include "svlad/random.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

// All trainable parameters, addressable by name. Map order (lexicographic)
// is the canonical order for optimizer state and checkpoints; initialization
// order is the declaration order, which is fixed by the model config.
using ModelParams = std::map<std::string, Tensor>;

enum class ParamInit { UniformFanIn, UnitVariance, Zero, One };

struct ParamDecl {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::UniformFanIn;
  std::size_t fan_in = 0;  // UniformFanIn bound is 1/sqrt(fan_in)
};

inline ModelParams materialize_params(const std::vector<ParamDecl>& decls, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417u));
  ModelParams out;
  for (const ParamDecl& d : decls) {
    Tensor t(d.shape);
    switch (d.init) {
      case ParamInit::Zero:
        break;
      case ParamInit::One:
        t.fill(1.0);
        break;
      case ParamInit::UnitVariance: {
        // rows land at the same norm scale as layer-normalized activations
        const double bound = 1.7320508075688772;  // sqrt(3): uniform with variance 1
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
        break;
      }
      case ParamInit::UniformFanIn: {
        if (d.fan_in == 0) throw InternalError("fan_in unset for " + d.name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(d.fan_in));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
        break;
      }
    }
    if (!out.emplace(d.name, std::move(t)).second)
      throw InternalError("duplicate parameter declaration: " + d.name);
  }
  return out;
}

// Binds named parameters into a graph as grad-requiring leaves, one leaf per
// name no matter how many times it is consumed. That single-bind rule is what
// makes the shared semantic vectors genuinely shared across modalities and
// scales: every use pulls the same leaf.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const ModelParams& params) : g_(&g), params_(&params) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    auto pit = params_->find(name);
    if (pit == params_->end()) throw InternalError("unknown parameter: " + name);
    Var v = g_->param(name, pit->second);
    bound_.emplace(name, v);
    return v;
  }

  bool bound(const std::string& name) const { return bound_.count(name) != 0; }

 private:
  Graph* g_;
  const ModelParams* params_;
  std::map<std::string, Var> bound_;
};

}  // namespace svlad
