#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "svlad/grad_check.hpp"
#include "svlad/graph.hpp"
#include "svlad/pooling.hpp"
#include "svlad/random.hpp"

using namespace svlad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Reduce an op's (possibly tensor-valued) output to a scalar through a fixed
// random projection, then finite-difference every input element.
using OpBuilder = std::function<Var(Graph&, const NamedTensors&)>;

GradCheckReport projected_check(const OpBuilder& op, const NamedTensors& inputs,
                                std::uint64_t seed) {
  Tensor proj;
  {
    Graph probe(/*recording=*/false);
    Var out = op(probe, inputs);
    Rng rng(mix_seed(seed, 0x9e11));
    proj = Tensor(probe.value(out).shape());
    for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = rng.uniform(-1.0, 1.0);
  }
  ScalarBuilder scalar = [&op, proj](Graph& g, const NamedTensors& in) {
    return g.sum_all(g.mul_const(op(g, in), proj));
  };
  return grad_check(scalar, inputs);
}

void run_trials(const char* name, int trials,
                const std::function<std::pair<OpBuilder, NamedTensors>(Rng&)>& make) {
  for (int t = 0; t < trials; ++t) {
    Rng rng(mix_seed(0xD1FF, static_cast<std::uint64_t>(t)));
    auto [op, inputs] = make(rng);
    GradCheckReport rep = projected_check(op, inputs, static_cast<std::uint64_t>(t));
    INFO(name << " trial " << t << " worst=" << rep.worst_input << "[" << rep.worst_index
              << "] analytic=" << rep.analytic << " numeric=" << rep.numeric);
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

}  // namespace

TEST_SUITE_BEGIN("gradients");

TEST_CASE("elementwise ops") {
  run_trials("add/sub/mul/scale", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(6);
    NamedTensors in{{"a", random_tensor({n, d}, rng)}, {"b", random_tensor({n, d}, rng)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      Var a = g.param("a", in.at("a"));
      Var b = g.param("b", in.at("b"));
      Var s = g.sub(g.add(a, g.scale(b, 0.7)), g.mul(a, b));
      return g.mul(s, s);
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("const-operand ops") {
  run_trials("add_const/mul_const", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(6);
    Tensor c1 = random_tensor({n, d}, rng);
    Tensor c2 = random_tensor({n, d}, rng);
    NamedTensors in{{"a", random_tensor({n, d}, rng)}};
    OpBuilder op = [c1, c2](Graph& g, const NamedTensors& in) {
      return g.mul_const(g.add_const(g.param("a", in.at("a")), c1), c2);
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("matmul and linear") {
  run_trials("matmul", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(4), p = 1 + rng.index(4), q = 1 + rng.index(4);
    NamedTensors in{{"a", random_tensor({n, p}, rng)}, {"b", random_tensor({p, q}, rng)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      return g.matmul(g.param("a", in.at("a")), g.param("b", in.at("b")));
    };
    return std::make_pair(op, in);
  });
  run_trials("linear", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(4), p = 1 + rng.index(4), q = 1 + rng.index(4);
    NamedTensors in{{"x", random_tensor({n, p}, rng)},
                    {"W", random_tensor({p, q}, rng)},
                    {"b", random_tensor({q}, rng)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      return g.linear(g.param("x", in.at("x")), g.param("W", in.at("W")), g.param("b", in.at("b")));
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("transpose and reshape") {
  run_trials("transpose/reshape", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(5);
    NamedTensors in{{"a", random_tensor({n, d}, rng)}};
    OpBuilder op = [n, d](Graph& g, const NamedTensors& in) {
      Var t = g.transpose(g.param("a", in.at("a")));
      return g.reshape(t, Shape{1, n * d});
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("softmax") {
  run_trials("softmax", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(3), d = 1 + rng.index(6);
    NamedTensors in{{"a", random_tensor({n, d}, rng, -3.0, 3.0)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      return g.softmax_rows(g.param("a", in.at("a")));
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("softmax full Jacobian vs finite differences") {
  // analytic Jacobian J[i][j] = p_i (delta_ij - p_j), verified column by column
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.index(5);
    Tensor x = random_tensor({d}, rng, -2.0, 2.0);
    Graph g;
    const Tensor p = g.value(g.softmax_rows(g.input(x)));
    const double eps = 1e-6;
    for (std::size_t j = 0; j < d; ++j) {
      Tensor up = x, dn = x;
      up[j] += eps;
      dn[j] -= eps;
      Graph gu, gd;
      const Tensor pu = gu.value(gu.softmax_rows(gu.input(up)));
      const Tensor pd = gd.value(gd.softmax_rows(gd.input(dn)));
      for (std::size_t i = 0; i < d; ++i) {
        const double numeric = (pu[i] - pd[i]) / (2.0 * eps);
        const double analytic = p[i] * ((i == j ? 1.0 : 0.0) - p[j]);
        CHECK(std::abs(numeric - analytic) <= 1e-6);
      }
    }
  }
}

TEST_CASE("gelu layer_norm l2_normalize") {
  run_trials("gelu", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(3), d = 1 + rng.index(6);
    NamedTensors in{{"a", random_tensor({n, d}, rng, -3.0, 3.0)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) { return g.gelu(g.param("a", in.at("a"))); };
    return std::make_pair(op, in);
  });
  run_trials("layer_norm", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(3), d = 2 + rng.index(6);
    NamedTensors in{{"x", random_tensor({n, d}, rng)},
                    {"gamma", random_tensor({d}, rng, 0.5, 1.5)},
                    {"beta", random_tensor({d}, rng)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      return g.layer_norm_rows(g.param("x", in.at("x")), g.param("gamma", in.at("gamma")),
                               g.param("beta", in.at("beta")), 1e-5);
    };
    return std::make_pair(op, in);
  });
  run_trials("l2_normalize", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(3), d = 1 + rng.index(6);
    Tensor x = random_tensor({n, d}, rng);
    // keep rows clear of the eps guard kink
    for (std::size_t r = 0; r < n; ++r) x.at(r, 0) += (x.at(r, 0) < 0 ? -0.5 : 0.5);
    NamedTensors in{{"x", x}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      return g.l2_normalize_rows(g.param("x", in.at("x")));
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("slicing stacking gathering") {
  run_trials("row/col slice + concat", 20, [](Rng& rng) {
    const std::size_t n = 2 + rng.index(4), d = 2 + rng.index(4);
    NamedTensors in{{"a", random_tensor({n, d}, rng)}};
    OpBuilder op = [n, d](Graph& g, const NamedTensors& in) {
      Var a = g.param("a", in.at("a"));
      Var top = g.row_slice(a, 0, n / 2 + 1);
      Var bot = g.row_slice(a, n / 2, n);
      Var rows = g.concat_rows({top, bot});
      Var left = g.col_slice(rows, 0, d / 2 + 1);
      Var right = g.col_slice(rows, d / 2, d);
      return g.concat_cols({left, right});
    };
    return std::make_pair(op, in);
  });
  run_trials("gather_rows", 20, [](Rng& rng) {
    const std::size_t v = 3 + rng.index(5), d = 1 + rng.index(5);
    const std::size_t n = 1 + rng.index(6);
    std::vector<std::size_t> ids(n);
    for (auto& id : ids) id = rng.index(v);  // repeats are intentional
    NamedTensors in{{"table", random_tensor({v, d}, rng)}};
    OpBuilder op = [ids](Graph& g, const NamedTensors& in) {
      return g.gather_rows(g.param("table", in.at("table")), ids);
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("pooling and reductions") {
  run_trials("mean_pool_windows", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(10), d = 1 + rng.index(4);
    const std::size_t m = 1 + rng.index(4);
    std::vector<bool> mask(n, false);
    std::size_t nv = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = rng.uniform() < 0.75;
      nv += mask[i];
    }
    if (nv == 0) mask[0] = true;
    NamedTensors in{{"x", random_tensor({n, d}, rng)}};
    OpBuilder op = [mask, m](Graph& g, const NamedTensors& in) {
      return mean_pool_windows(g, g.param("x", in.at("x")), mask, m).values;
    };
    return std::make_pair(op, in);
  });
  run_trials("masked_mean_rows", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(8), d = 1 + rng.index(4);
    std::vector<bool> mask(n, false);
    mask[rng.index(n)] = true;
    for (std::size_t i = 0; i < n; ++i) mask[i] = mask[i] || rng.uniform() < 0.5;
    NamedTensors in{{"x", random_tensor({n, d}, rng)}};
    OpBuilder op = [mask](Graph& g, const NamedTensors& in) {
      return g.masked_mean_rows(g.param("x", in.at("x")), mask);
    };
    return std::make_pair(op, in);
  });
  run_trials("max_over_rows", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(6), d = 1 + rng.index(5);
    NamedTensors in{{"x", random_tensor({n, d}, rng)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      return g.max_over_rows(g.param("x", in.at("x")));
    };
    return std::make_pair(op, in);
  });
  run_trials("col_sums/scale_rows/sum_all", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(5), d = 1 + rng.index(5);
    NamedTensors in{{"x", random_tensor({n, d}, rng)}, {"s", random_tensor({n}, rng)}};
    OpBuilder op = [](Graph& g, const NamedTensors& in) {
      Var scaled = g.scale_rows(g.param("x", in.at("x")), g.param("s", in.at("s")));
      Var sums = g.col_sums(scaled);
      return g.reshape(sums, Shape{1, g.value(sums).size()});
    };
    return std::make_pair(op, in);
  });
}

TEST_CASE("loss ops") {
  run_trials("cross_entropy_rows", 20, [](Rng& rng) {
    const std::size_t n = 1 + rng.index(4), c = 2 + rng.index(5);
    std::vector<std::size_t> targets(n);
    for (auto& t : targets) t = rng.index(c);
    NamedTensors in{{"logits", random_tensor({n, c}, rng, -2.0, 2.0)}};
    OpBuilder op = [targets](Graph& g, const NamedTensors& in) {
      return g.cross_entropy_rows(g.param("logits", in.at("logits")), targets);
    };
    return std::make_pair(op, in);
  });
  run_trials("squared_error", 20, [](Rng& rng) {
    const double target = rng.uniform(-3.0, 3.0);
    NamedTensors in{{"pred", random_tensor({1, 1}, rng, -3.0, 3.0)}};
    OpBuilder op = [target](Graph& g, const NamedTensors& in) {
      return g.squared_error(g.param("pred", in.at("pred")), target);
    };
    return std::make_pair(op, in);
  });
}

TEST_SUITE_END();
