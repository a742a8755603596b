#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "svlad/grad_check.hpp"
#include "svlad/model.hpp"
#include "svlad/vlad.hpp"
#include "test_support.hpp"

using namespace svlad;
using svtest::random_tensor;

TEST_SUITE_BEGIN("vlad");

TEST_CASE("vlad_assign known values") {
  {
    // K = 1: singleton softmax
    Graph g;
    Var f = g.input(random_tensor({3, 4}, *[] { static Rng r(1); return &r; }()));
    Var c = g.input(Tensor({1, 4}, 0.3));
    Var b = g.input(Tensor({1}, -0.7));
    const Tensor& w = g.value(vlad_assign(g, f, c, b));
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.at(i, 0) == 1.0);
  }
  {
    // logits (1, 0): frozen two-way softmax
    Graph g;
    Var f = g.input(Tensor::matrix({{1, 0}}));
    Var c = g.input(Tensor::matrix({{1, 0}, {0, 1}}));
    Var b = g.input(Tensor({2}, 0.0));
    const Tensor& w = g.value(vlad_assign(g, f, c, b));
    CHECK(w.at(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(w.at(0, 1) == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  }
  {
    // rows sum to one
    Rng rng(12);
    Graph g;
    Var f = g.input(random_tensor({5, 6}, rng));
    Var c = g.input(random_tensor({4, 6}, rng));
    Var b = g.input(random_tensor({4}, rng));
    const Tensor& w = g.value(vlad_assign(g, f, c, b));
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += w.at(i, j);
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("vlad_aggregate known values") {
  {
    // f == c_hat with K = 1: residual cancels, eps guard keeps the zero row
    Graph g;
    Var f = g.input(Tensor::matrix({{0.4, -0.2}}));
    Var w = g.input(Tensor::matrix({{1.0}}));
    Var ch = g.input(Tensor::matrix({{0.4, -0.2}}));
    const Tensor& r = g.value(vlad_aggregate(g, f, w, ch));
    CHECK(r.at(0, 0) == 0.0);
    CHECK(r.at(0, 1) == 0.0);
  }
  {
    // hand-summed residual: (2,0) + (0,2) = (2,2) -> normalized (0.70711, 0.70711)
    Graph g;
    Var f = g.input(Tensor::matrix({{2, 0}, {0, 2}}));
    Var w = g.input(Tensor::matrix({{1.0}, {1.0}}));
    Var ch = g.input(Tensor::matrix({{0.0, 0.0}}));
    const Tensor& r = g.value(vlad_aggregate(g, f, w, ch));
    CHECK(r.at(0, 0) == doctest::Approx(0.7071067811865475).epsilon(1e-12));
    CHECK(r.at(0, 1) == doctest::Approx(0.7071067811865475).epsilon(1e-12));
  }
}

TEST_CASE("vlad assign+aggregate is token-permutation invariant") {
  Rng rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.index(8), d = 2 + rng.index(6), K = 1 + rng.index(5);
    Tensor f = random_tensor({n, d}, rng);
    Tensor c = random_tensor({K, d}, rng);
    Tensor ch = random_tensor({K, d}, rng);
    Tensor b = random_tensor({K}, rng);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    Tensor fp({n, d});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(f.row(perm[i]), f.row(perm[i]) + d, fp.row(i));

    auto run = [&](const Tensor& feats) {
      Graph g;
      Var fv = g.input(feats);
      Var w = vlad_assign(g, fv, g.input(c), g.input(b));
      return g.value(vlad_aggregate(g, fv, w, g.input(ch)));
    };
    CHECK(max_abs_diff(run(f), run(fp)) <= 1e-12);
  }
}

TEST_CASE("vlad_project zero input with zero bias yields the layer-norm beta row") {
  const std::size_t K = 3, d_s = 4;
  ModelParams params;
  params.emplace("vlad.proj.T.w", Tensor({K * d_s, d_s}));
  params.emplace("vlad.proj.T.b", Tensor({d_s}));
  params.emplace("vlad.proj.T.ln.gamma", Tensor({d_s}, 1.0));
  Tensor beta({d_s});
  for (std::size_t j = 0; j < d_s; ++j) beta[j] = 0.5 * static_cast<double>(j);
  params.emplace("vlad.proj.T.ln.beta", beta);
  Graph g;
  ParamBinder bind(g, params);
  const Tensor& u = g.value(vlad_project(g, bind, Modality::Text, g.input(Tensor({K, d_s})), 1e-5));
  CHECK(u.rows() == 1);
  CHECK(u.cols() == d_s);
  for (std::size_t j = 0; j < d_s; ++j) CHECK(u[j] == doctest::Approx(beta[j]).epsilon(1e-12));
}

TEST_CASE("vlad projection shapes under the paper configuration") {
  std::vector<ParamDecl> decls;
  declare_vlad_projection(decls, Modality::Video, 10, 128);
  CHECK(decls[0].shape == Shape{10 * 128, 128});  // flatten length 1280
  CHECK(decls[1].shape == Shape{128});
}

TEST_CASE("fusion matrix row count and tag round-trip") {
  CHECK(fusion_row_tags({1, 2, 3, 10}).size() == 15);
  CHECK(fusion_row_tags({1}).size() == 6);
  for (const RowTag& tag : fusion_row_tags({1, 2, 3, 10})) {
    const RowTag back = parse_row_tag(format_row_tag(tag));
    CHECK(back.modality == tag.modality);
    CHECK(back.scale == tag.scale);
    CHECK(back.is_mean == tag.is_mean);
  }
}

TEST_CASE("fuse_and_predict degenerate single-row max") {
  const std::size_t d_s = 6;
  ModelConfig cfg;
  cfg.d_s = d_s;
  cfg.fusion_layers = 0;
  cfg.fusion_heads = 2;
  cfg.task = Task::Regression;
  cfg.classes = 1;
  ModelParams params;
  params.emplace("fusion.slot", Tensor({1, d_s}));
  Rng rng(15);
  params.emplace("head.w", random_tensor({d_s, 1}, rng));
  params.emplace("head.b", Tensor({1}));
  Graph g;
  ParamBinder bind(g, params);
  Tensor row = random_tensor({1, d_s}, rng);
  FusionMatrix R{g.input(row), {RowTag{Modality::Text, 1, false}}};
  ForwardResult out = fuse_and_predict(g, bind, cfg, R);
  CHECK(max_abs_diff(g.value(out.fused), row) == 0.0);
  CHECK(g.value(out.output).size() == 1);
}

TEST_CASE("per-dimension max dominates every row") {
  Rng rng(16);
  Tensor x = random_tensor({7, 5}, rng);
  Graph g;
  const Tensor& m = g.value(g.max_over_rows(g.input(x)));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(m[j] >= x.at(i, j));
}

TEST_CASE("structural invariants over random configurations") {
  // the acceptance suite runs 200 of these; keep a fast slice in the unit run
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(mix_seed(0x57A7, seed));
    ModelConfig cfg = svtest::random_model_config(rng);
    ModelParams params = init_params(cfg, mix_seed(seed, 1));
    PreparedSample s = svtest::random_sample(cfg, rng);
    Graph g;
    ParamBinder bind(g, params);
    std::vector<VladCaptureEntry> capture;
    ForwardResult fr = model_forward(g, bind, cfg, s, &capture);

    // fusion matrix shape law
    CHECK(fr.tags.size() == 3 * cfg.scales.size() + 3);
    CHECK(capture.size() == 3 * cfg.scales.size());

    for (const VladCaptureEntry& e : capture) {
      for (std::size_t i = 0; i < e.weights.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < e.weights.cols(); ++j) sum += e.weights.at(i, j);
        CHECK(std::abs(sum - 1.0) <= 1e-9);
      }
      for (std::size_t j = 0; j < e.aggregated.rows(); ++j) {
        double nrm = 0.0;
        for (std::size_t k = 0; k < e.aggregated.cols(); ++k)
          nrm += e.aggregated.at(j, k) * e.aggregated.at(j, k);
        nrm = std::sqrt(nrm);
        CHECK((nrm == 0.0 || std::abs(nrm - 1.0) <= 1e-9));
      }
    }

    // exactly one shared anchor set, consumed by every modality and scale
    CHECK(params.count("vlad.c") == 1);
    CHECK(params.count("vlad.c_hat") == 1);
    CHECK(params.count("vlad.b") == 1);
    std::size_t anchor_like = 0;
    for (const auto& [name, t] : params)
      if (name.rfind("vlad.", 0) == 0 && name.rfind("vlad.proj.", 0) != 0) ++anchor_like;
    CHECK(anchor_like == 3);
  }
}

TEST_CASE("gradients flow through the whole fusion stack") {
  // finite differences on every parameter of a tiny model, output projected
  Rng rng(41);
  ModelConfig cfg;
  cfg.d_s = 4;
  cfg.K = 2;
  cfg.scales = {1, 2};
  cfg.fusion_layers = 1;
  cfg.fusion_heads = 2;
  cfg.fusion_ffn = 8;
  cfg.task = Task::Regression;
  cfg.classes = 1;
  cfg.text = {Modality::Text, 9, 4, 1, 2, 16, 8, false};
  cfg.video = {Modality::Video, 3, 4, 2, 2, 16, 8, true};
  cfg.audio = {Modality::Audio, 3, 4, 2, 2, 16, 8, true};
  NamedTensors inputs;
  for (const ParamDecl& d : declare_model_params(cfg)) {
    Tensor t = random_tensor(d.shape, rng, -0.5, 0.5);
    if (d.init == ParamInit::One)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0 + 0.2 * t[i];
    inputs.emplace(d.name, t);
  }
  PreparedSample s = svtest::random_sample(cfg, rng, 6);
  ScalarBuilder builder = [cfg, s](Graph& g, const NamedTensors& in) {
    ModelParams params(in.begin(), in.end());
    ParamBinder bind(g, params);
    for (const auto& [k, v] : params) bind(k);
    ForwardResult fr = model_forward(g, bind, cfg, s);
    return g.sum_all(fr.output);
  };
  GradCheckReport rep = grad_check(builder, inputs);
  INFO("worst " << rep.worst_input << "[" << rep.worst_index << "] analytic=" << rep.analytic
                << " numeric=" << rep.numeric);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_SUITE_END();
