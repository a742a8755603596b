#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "svlad/grad_check.hpp"
#include "svlad/model.hpp"
#include "svlad/pooling.hpp"
#include "svlad/s3c.hpp"
#include "svlad/transformer.hpp"

namespace svlad {

// Finite-difference coverage of every differentiable operation plus the
// end-to-end loss. Each check builds a random instance from its seed,
// projects tensor outputs to a scalar through a fixed random cotangent, and
// compares analytic partials against central differences.
struct GradSuiteCheck {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

namespace gradsuite_detail {

inline Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

using OpBuilder = std::function<Var(Graph&, const NamedTensors&)>;

inline GradCheckReport projected(const OpBuilder& op, const NamedTensors& inputs,
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

// Toy end-to-end configuration: d_s = 8, K = 2, scales {1, 2}.
inline ModelConfig toy_model_config() {
  ModelConfig cfg;
  cfg.d_s = 8;
  cfg.K = 2;
  cfg.scales = {1, 2};
  cfg.fusion_layers = 1;
  cfg.fusion_heads = 2;
  cfg.fusion_ffn = 16;
  cfg.task = Task::Regression;
  cfg.classes = 1;
  cfg.text = {Modality::Text, 9, 8, 1, 2, 16, 16, true};
  cfg.video = {Modality::Video, 4, 8, 2, 2, 16, 16, true};
  cfg.audio = {Modality::Audio, 3, 8, 2, 2, 16, 16, true};
  return cfg;
}

inline PreparedSample toy_sample(const ModelConfig& cfg, Rng& rng, const std::string& id) {
  PreparedSample s;
  s.id = id;
  const std::size_t nt = 2 + rng.index(5);
  for (std::size_t i = 0; i < nt; ++i) s.tokens.push_back(rng.index(cfg.text.input_dim));
  s.video = rand_tensor({2 + rng.index(5), cfg.video.input_dim}, rng);
  s.audio = rand_tensor({2 + rng.index(5), cfg.audio.input_dim}, rng);
  s.label = Label::regression(rng.uniform(-2.0, 2.0));
  return s;
}

}  // namespace gradsuite_detail

// Gradient of the total loss (task + active multi-cluster S3C) with respect
// to every named parameter of the toy model, over two samples.
inline GradCheckReport end_to_end_grad_check(std::uint64_t seed) {
  using namespace gradsuite_detail;
  Rng rng(mix_seed(seed, 0xE2E));
  ModelConfig cfg = toy_model_config();
  std::vector<PreparedSample> samples{toy_sample(cfg, rng, "a"), toy_sample(cfg, rng, "b")};

  std::vector<ClusterState> states(1);
  states[0].C = 2;
  states[0].Z = rand_tensor({2, cfg.d_s}, rng, -0.8, 0.8);
  states[0].active = true;
  states[0].assignments["a"] = 0;
  states[0].assignments["b"] = 1;

  NamedTensors inputs;
  for (const ParamDecl& d : declare_model_params(cfg)) {
    Tensor t = rand_tensor(d.shape, rng, -0.5, 0.5);
    if (d.init == ParamInit::One)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0 + 0.2 * t[i];
    inputs.emplace(d.name, t);
  }
  ScalarBuilder builder = [cfg, samples, states](Graph& g, const NamedTensors& in) {
    ModelParams params(in.begin(), in.end());
    ParamBinder bind(g, params);
    for (const auto& [k, v] : params) bind(k);
    Var total;
    for (const PreparedSample& s : samples) {
      ForwardResult fr = model_forward(g, bind, cfg, s);
      Var loss = g.add(task_loss(g, fr.output, s.label, cfg.task),
                       multi_s3c(g, fr.fused, states, s.id));
      total = total.valid() ? g.add(total, loss) : loss;
    }
    return g.scale(total, 0.5);
  };
  return grad_check(builder, inputs);
}

inline std::vector<GradSuiteCheck> gradient_suite() {
  using namespace gradsuite_detail;
  std::vector<GradSuiteCheck> suite;
  auto add = [&suite](std::string name, std::function<GradCheckReport(std::uint64_t)> fn) {
    suite.push_back({std::move(name), std::move(fn)});
  };

  add("add/sub/mul/scale", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 1));
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(5);
    NamedTensors in{{"a", rand_tensor({n, d}, rng)}, {"b", rand_tensor({n, d}, rng)}};
    return projected(
        [](Graph& g, const NamedTensors& in) {
          Var a = g.param("a", in.at("a")), b = g.param("b", in.at("b"));
          return g.mul(g.sub(g.add(a, g.scale(b, 0.3)), b), a);
        },
        in, seed);
  });
  add("add_const/mul_const", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 2));
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(5);
    Tensor c1 = rand_tensor({n, d}, rng), c2 = rand_tensor({n, d}, rng);
    NamedTensors in{{"a", rand_tensor({n, d}, rng)}};
    return projected(
        [c1, c2](Graph& g, const NamedTensors& in) {
          return g.mul_const(g.add_const(g.param("a", in.at("a")), c1), c2);
        },
        in, seed);
  });
  add("matmul", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 3));
    const std::size_t n = 1 + rng.index(4), p = 1 + rng.index(4), q = 1 + rng.index(4);
    NamedTensors in{{"a", rand_tensor({n, p}, rng)}, {"b", rand_tensor({p, q}, rng)}};
    return projected(
        [](Graph& g, const NamedTensors& in) {
          return g.matmul(g.param("a", in.at("a")), g.param("b", in.at("b")));
        },
        in, seed);
  });
  add("linear", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 4));
    const std::size_t n = 1 + rng.index(4), p = 1 + rng.index(4), q = 1 + rng.index(4);
    NamedTensors in{{"x", rand_tensor({n, p}, rng)},
                    {"W", rand_tensor({p, q}, rng)},
                    {"b", rand_tensor({q}, rng)}};
    return projected(
        [](Graph& g, const NamedTensors& in) {
          return g.linear(g.param("x", in.at("x")), g.param("W", in.at("W")),
                          g.param("b", in.at("b")));
        },
        in, seed);
  });
  add("transpose/reshape", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 5));
    const std::size_t n = 1 + rng.index(4), d = 1 + rng.index(5);
    NamedTensors in{{"a", rand_tensor({n, d}, rng)}};
    return projected(
        [n, d](Graph& g, const NamedTensors& in) {
          return g.reshape(g.transpose(g.param("a", in.at("a"))), Shape{1, n * d});
        },
        in, seed);
  });
  add("softmax", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 6));
    NamedTensors in{{"a", rand_tensor({1 + rng.index(3), 1 + rng.index(6)}, rng, -3, 3)}};
    return projected(
        [](Graph& g, const NamedTensors& in) { return g.softmax_rows(g.param("a", in.at("a"))); },
        in, seed);
  });
  add("gelu", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 7));
    NamedTensors in{{"a", rand_tensor({1 + rng.index(3), 1 + rng.index(6)}, rng, -3, 3)}};
    return projected(
        [](Graph& g, const NamedTensors& in) { return g.gelu(g.param("a", in.at("a"))); }, in,
        seed);
  });
  add("layer_norm", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 8));
    const std::size_t n = 1 + rng.index(3), d = 2 + rng.index(6);
    NamedTensors in{{"x", rand_tensor({n, d}, rng)},
                    {"gamma", rand_tensor({d}, rng, 0.5, 1.5)},
                    {"beta", rand_tensor({d}, rng)}};
    return projected(
        [](Graph& g, const NamedTensors& in) {
          return g.layer_norm_rows(g.param("x", in.at("x")), g.param("gamma", in.at("gamma")),
                                   g.param("beta", in.at("beta")), 1e-5);
        },
        in, seed);
  });
  add("l2_normalize", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 9));
    const std::size_t n = 1 + rng.index(3), d = 1 + rng.index(6);
    Tensor x = rand_tensor({n, d}, rng);
    for (std::size_t r = 0; r < n; ++r) x.at(r, 0) += x.at(r, 0) < 0 ? -0.5 : 0.5;
    NamedTensors in{{"x", x}};
    return projected(
        [](Graph& g, const NamedTensors& in) {
          return g.l2_normalize_rows(g.param("x", in.at("x")));
        },
        in, seed);
  });
  add("slice/concat", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 10));
    const std::size_t n = 2 + rng.index(4), d = 2 + rng.index(4);
    NamedTensors in{{"a", rand_tensor({n, d}, rng)}};
    return projected(
        [n, d](Graph& g, const NamedTensors& in) {
          Var a = g.param("a", in.at("a"));
          Var rows = g.concat_rows({g.row_slice(a, 0, n / 2 + 1), g.row_slice(a, n / 2, n)});
          return g.concat_cols({g.col_slice(rows, 0, d / 2 + 1), g.col_slice(rows, d / 2, d)});
        },
        in, seed);
  });
  add("gather_rows", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 11));
    const std::size_t v = 3 + rng.index(5), d = 1 + rng.index(5), n = 1 + rng.index(6);
    std::vector<std::size_t> ids(n);
    for (auto& id : ids) id = rng.index(v);
    NamedTensors in{{"t", rand_tensor({v, d}, rng)}};
    return projected(
        [ids](Graph& g, const NamedTensors& in) {
          return g.gather_rows(g.param("t", in.at("t")), ids);
        },
        in, seed);
  });
  add("mean_pool_windows", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 12));
    const std::size_t n = 1 + rng.index(10), d = 1 + rng.index(4), m = 1 + rng.index(4);
    std::vector<bool> mask(n, false);
    mask[rng.index(n)] = true;
    for (std::size_t i = 0; i < n; ++i) mask[i] = mask[i] || rng.uniform() < 0.7;
    NamedTensors in{{"x", rand_tensor({n, d}, rng)}};
    return projected(
        [mask, m](Graph& g, const NamedTensors& in) {
          return mean_pool_windows(g, g.param("x", in.at("x")), mask, m).values;
        },
        in, seed);
  });
  add("masked_mean/max/col_sums/scale_rows", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 13));
    const std::size_t n = 1 + rng.index(5), d = 1 + rng.index(5);
    std::vector<bool> mask(n, false);
    mask[rng.index(n)] = true;
    for (std::size_t i = 0; i < n; ++i) mask[i] = mask[i] || rng.uniform() < 0.5;
    NamedTensors in{{"x", rand_tensor({n, d}, rng)}, {"s", rand_tensor({n}, rng)}};
    return projected(
        [mask](Graph& g, const NamedTensors& in) {
          Var x = g.param("x", in.at("x"));
          Var scaled = g.scale_rows(x, g.param("s", in.at("s")));
          Var parts = g.concat_rows({g.masked_mean_rows(x, mask), g.max_over_rows(scaled)});
          Var sums = g.col_sums(parts);
          return g.reshape(sums, Shape{1, g.value(sums).size()});
        },
        in, seed);
  });
  add("cross_entropy", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 14));
    const std::size_t n = 1 + rng.index(4), c = 2 + rng.index(5);
    std::vector<std::size_t> targets(n);
    for (auto& t : targets) t = rng.index(c);
    NamedTensors in{{"logits", rand_tensor({n, c}, rng, -2, 2)}};
    return projected(
        [targets](Graph& g, const NamedTensors& in) {
          return g.cross_entropy_rows(g.param("logits", in.at("logits")), targets);
        },
        in, seed);
  });
  add("squared_error/sum_all", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 15));
    const double target = rng.uniform(-2, 2);
    NamedTensors in{{"p", rand_tensor({1, 1}, rng)}, {"q", rand_tensor({2, 3}, rng)}};
    return projected(
        [target](Graph& g, const NamedTensors& in) {
          return g.add(g.squared_error(g.param("p", in.at("p")), target),
                       g.sum_all(g.param("q", in.at("q"))));
        },
        in, seed);
  });
  add("transformer_encoder", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 16));
    const std::size_t n = 2 + rng.index(3), d = 4;
    TransformerSpec spec{1, 2, 8, 1e-5};
    std::vector<ParamDecl> decls;
    declare_transformer_params(decls, "enc", d, spec);
    NamedTensors in;
    for (const ParamDecl& dd : decls) {
      Tensor t = rand_tensor(dd.shape, rng, -0.6, 0.6);
      if (dd.init == ParamInit::One)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0 + 0.2 * t[i];
      in.emplace(dd.name, t);
    }
    in.emplace("x", rand_tensor({n, d}, rng));
    std::vector<bool> mask(n, true);
    if (n > 2) mask[n - 1] = false;
    return projected(
        [mask, spec](Graph& g, const NamedTensors& in) {
          ModelParams params;
          for (const auto& [k, v] : in)
            if (k != "x") params.emplace(k, v);
          ParamBinder bind(g, params);
          for (const auto& [k, v] : params) bind(k);
          return transformer_encoder(g, bind, "enc", g.param("x", in.at("x")), mask, spec);
        },
        in, seed);
  });
  add("vlad_assign/aggregate/project", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 17));
    const std::size_t n = 1 + rng.index(5), d = 4, K = 1 + rng.index(3);
    NamedTensors in{{"F", rand_tensor({n, d}, rng)},
                    {"vlad.c", rand_tensor({K, d}, rng)},
                    {"vlad.c_hat", rand_tensor({K, d}, rng)},
                    {"vlad.b", rand_tensor({K}, rng)},
                    {"vlad.proj.T.w", rand_tensor({K * d, d}, rng, -0.5, 0.5)},
                    {"vlad.proj.T.b", rand_tensor({d}, rng)},
                    {"vlad.proj.T.ln.gamma", rand_tensor({d}, rng, 0.8, 1.2)},
                    {"vlad.proj.T.ln.beta", rand_tensor({d}, rng)}};
    return projected(
        [](Graph& g, const NamedTensors& in) {
          ModelParams params(in.begin(), in.end());
          params.erase("F");
          ParamBinder bind(g, params);
          for (const auto& [k, v] : params) bind(k);
          Var F = g.param("F", in.at("F"));
          Var w = vlad_assign(g, F, bind("vlad.c"), bind("vlad.b"));
          Var r = vlad_aggregate(g, F, w, bind("vlad.c_hat"));
          return vlad_project(g, bind, Modality::Text, r, 1e-5);
        },
        in, seed);
  });
  add("s3c_loss", [](std::uint64_t seed) {
    Rng rng(mix_seed(seed, 18));
    const std::size_t d = 2 + rng.index(5), C = 2 + rng.index(4);
    ClusterState st;
    st.C = C;
    st.Z = rand_tensor({C, d}, rng);
    st.active = true;
    st.assignments["x"] = rng.index(C);
    NamedTensors in{{"fused", rand_tensor({1, d}, rng)}};
    return projected(
        [st](Graph& g, const NamedTensors& in) {
          return s3c_loss(g, g.param("fused", in.at("fused")), st, "x");
        },
        in, seed);
  });
  add("end_to_end_total_loss", [](std::uint64_t seed) { return end_to_end_grad_check(seed); });
  return suite;
}

}  // namespace svlad
