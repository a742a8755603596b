#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "svlad/graph.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

using NamedTensors = std::map<std::string, Tensor>;

// Value of a differentiable expression together with its analytic partials
// keyed by the names of the inputs it was built from.
struct GradPair {
  Tensor value;
  NamedTensors partials;
};

// Builds a scalar expression from named leaves. The builder must bind every
// differentiable input via Graph::param using the map's keys.
using ScalarBuilder = std::function<Var(Graph&, const NamedTensors&)>;

inline GradPair evaluate_with_grads(const ScalarBuilder& build, const NamedTensors& inputs) {
  Graph g;
  Var root = build(g, inputs);
  if (g.value(root).size() != 1)
    throw ShapeError("evaluate_with_grads requires a scalar-valued builder");
  g.backward(root);
  return GradPair{g.value(root), g.named_grads()};
}

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string worst_input;   // which named input held the worst element
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central finite differences against the analytic partials, elementwise.
// Relative error uses |a - n| / max(1, |a| + |n|), the usual damped form.
inline GradCheckReport grad_check(const ScalarBuilder& build, NamedTensors inputs,
                                  double eps = 1e-5, double tol = 1e-4) {
  const GradPair analytic = evaluate_with_grads(build, inputs);

  auto value_at = [&](const NamedTensors& pt) {
    Graph g(/*recording=*/false);
    Var root = build(g, pt);
    return g.value(root)[0];
  };

  GradCheckReport rep;
  for (auto& [name, tensor] : inputs) {
    const auto it = analytic.partials.find(name);
    if (it == analytic.partials.end())
      throw InternalError("builder did not bind input '" + name + "' as a parameter");
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double keep = tensor[i];
      tensor[i] = keep + eps;
      const double up = value_at(inputs);
      tensor[i] = keep - eps;
      const double down = value_at(inputs);
      tensor[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = it->second[i];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      if (rel >= rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = name;
        rep.worst_index = i;
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace svlad
