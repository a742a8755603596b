// Acceptance runner: executes every acceptance criterion at its stated
// tolerance and prints one PASS/FAIL line per criterion. Exit code equals
// the number of failed criteria.
//
// Heavy criteria train real models; with SVLD_THREADS > 1 the independent
// runs of the ablation and clustering-effect studies execute concurrently
// (each run itself stays single-threaded, so results are identical either
// way).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "svlad/config.hpp"
#include "svlad/csv.hpp"
#include "svlad/data.hpp"
#include "svlad/gradcheck_suite.hpp"
#include "svlad/metrics.hpp"
#include "svlad/s3c.hpp"
#include "svlad/synth.hpp"
#include "svlad/train.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace svlad;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int idx, bool pass, const std::string& what, double seconds) {
  std::printf("[%s] %d %s (%.1fs)\n", pass ? "PASS" : "FAIL", idx, what.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t run_parallelism() {
  if (const char* env = std::getenv("SVLD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 1 ? std::min<std::size_t>(hw, 4) : 1;
}

// Executes jobs concurrently at the given width; results land by index.
void run_jobs(std::vector<std::function<void()>> jobs, std::size_t width) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      jobs[i]();
    }
  };
  if (width <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(width, jobs.size()); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

RunConfig base_config(Task task, const std::string& manifest, std::size_t epochs,
                      std::uint64_t seed) {
  RunConfig cfg;
  cfg.manifest = manifest;
  cfg.out_dir = "";
  cfg.task = task;
  cfg.seed = seed;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.peak_lr = 1e-3;
  cfg.warmup_fraction = 0.1;
  cfg.grad_clip = 1.0;
  cfg.d_s = 32;
  cfg.K = 4;
  cfg.scales = {1, 2, 3};
  cfg.fusion_layers = 2;
  cfg.fusion_heads = 4;
  cfg.fusion_ffn = 64;
  cfg.text = {0, 32, 4, 48, 64, true};
  cfg.video = {2, 32, 4, 48, 64, true};
  cfg.audio = {2, 32, 4, 48, 64, true};
  cfg.s3c_enabled = false;
  return cfg;
}

// ---- criterion 1: gradient suite ------------------------------------------------

void criterion_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  bool pass = true;
  for (const GradSuiteCheck& check : gradient_suite()) {
    const int trials = check.name == "end_to_end_total_loss" ? 1 : 20;
    for (int t = 0; t < trials; ++t) {
      GradCheckReport rep = check.run(static_cast<std::uint64_t>(t));
      if (rep.max_rel_err >= worst) {
        worst = rep.max_rel_err;
        worst_name = check.name;
      }
      pass = pass && rep.pass;
    }
  }
  const double secs = elapsed(t0);
  pass = pass && secs < 180.0;
  std::ostringstream what;
  what << "gradient suite: every op and the end-to-end loss vs central differences, "
       << "max_rel_err=" << worst << " (" << worst_name << "), tol 1e-4, budget 180s";
  report(1, pass, what.str(), secs);
}

// ---- criterion 2: structural invariants ------------------------------------------

void criterion_structure() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::string detail = "ok";
  for (std::uint64_t seed = 0; seed < 200 && pass; ++seed) {
    Rng rng(mix_seed(0x57A7E, seed));
    ModelConfig cfg = svtest::random_model_config(rng);
    ModelParams params = init_params(cfg, mix_seed(seed, 3));
    PreparedSample s = svtest::random_sample(cfg, rng);
    Graph g;
    ParamBinder bind(g, params);
    std::vector<VladCaptureEntry> capture;
    ForwardResult fr = model_forward(g, bind, cfg, s, &capture);

    if (fr.tags.size() != 3 * cfg.scales.size() + 3) {
      pass = false;
      detail = "fusion row count violated";
      break;
    }
    for (const VladCaptureEntry& e : capture) {
      for (std::size_t i = 0; i < e.weights.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < e.weights.cols(); ++j) sum += e.weights.at(i, j);
        if (std::abs(sum - 1.0) > 1e-9) {
          pass = false;
          detail = "assignment row sum off by " + std::to_string(sum - 1.0);
        }
      }
      for (std::size_t j = 0; j < e.aggregated.rows() && pass; ++j) {
        double nrm = 0.0;
        for (std::size_t k = 0; k < e.aggregated.cols(); ++k)
          nrm += e.aggregated.at(j, k) * e.aggregated.at(j, k);
        nrm = std::sqrt(nrm);
        if (!(nrm == 0.0 || std::abs(nrm - 1.0) <= 1e-9)) {
          pass = false;
          detail = "aggregated row norm " + std::to_string(nrm);
        }
      }
    }
    // exactly one shared anchor set
    std::size_t anchors = 0;
    for (const auto& [name, t] : params)
      if (name.rfind("vlad.", 0) == 0 && name.rfind("vlad.proj.", 0) != 0) ++anchors;
    if (params.count("vlad.c") != 1 || params.count("vlad.c_hat") != 1 ||
        params.count("vlad.b") != 1 || anchors != 3) {
      pass = false;
      detail = "shared anchor set not unique";
    }
    // token-permutation invariance of assign-then-aggregate
    {
      const std::size_t n = 3 + rng.index(6), d = cfg.d_s;
      Tensor F = svtest::random_tensor({n, d}, rng);
      std::vector<std::size_t> perm(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      rng.shuffle(perm);
      Tensor Fp({n, d});
      for (std::size_t i = 0; i < n; ++i)
        std::copy(F.row(perm[i]), F.row(perm[i]) + d, Fp.row(i));
      auto agg = [&](const Tensor& feats) {
        Graph gg;
        Var fv = gg.input(feats);
        Var c = gg.input(params.at("vlad.c"));
        Var b = gg.input(params.at("vlad.b"));
        Var ch = gg.input(params.at("vlad.c_hat"));
        return gg.value(vlad_aggregate(gg, fv, vlad_assign(gg, fv, c, b), ch));
      };
      if (max_abs_diff(agg(F), agg(Fp)) > 1e-12) {
        pass = false;
        detail = "token permutation moved the aggregate";
      }
    }
  }
  report(2, pass,
         "structural invariants over 200 random configs: row sums, unit norms, row counts, "
         "permutation invariance, single shared anchor set (" + detail + ")",
         elapsed(t0));
}

// ---- criterion 3: clustering oracle ----------------------------------------------

void criterion_clustering() {
  const auto t0 = Clock::now();
  bool pass = true;
  std::string detail = "ok";
  for (std::uint64_t inst = 0; inst < 50 && pass; ++inst) {
    Rng rng(mix_seed(0xACC3, inst));
    const std::size_t N = 8 + rng.index(57), D = 1 + rng.index(4);
    const std::size_t C = 2 + rng.index(std::min<std::size_t>(6, N - 2));
    Tensor pts = svtest::random_tensor({N, D}, rng, -3.0, 3.0);
    const std::uint64_t seed = mix_seed(0xFACE, inst);
    KMeansResult km = kmeans(pts, C, 40, seed);
    svtest::RefKMeans ref = svtest::reference_lloyd(pts, C, 40, seed);
    for (std::size_t i = 0; i < N; ++i)
      if (km.labels[i] != ref.labels[i]) {
        pass = false;
        detail = "assignment differs from the reference";
      }
    for (std::size_t c = 0; c < C && pass; ++c)
      for (std::size_t j = 0; j < D; ++j)
        if (km.centers.at(c, j) != ref.centers[c][j]) {
          pass = false;
          detail = "centers differ from the reference";
        }
    for (std::size_t t = 1; t < km.distortions.size() && pass; ++t)
      if (km.distortions[t] > km.distortions[t - 1] * (1.0 + 1e-12) + 1e-12) {
        pass = false;
        detail = "distortion increased";
      }
  }
  // EMA closed form including the extremes
  for (double alpha : {0.0, 0.37, 0.99, 1.0}) {
    Rng rng(mix_seed(0xE3A, static_cast<std::uint64_t>(alpha * 1000)));
    Tensor z = svtest::random_tensor({5, 3}, rng);
    Tensor fresh = svtest::random_tensor({5, 3}, rng);
    Tensor manual(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) manual[i] = alpha * z[i] + (1.0 - alpha) * fresh[i];
    Tensor updated = z;
    momentum_update(updated, fresh, alpha);
    if (max_abs_diff(updated, manual) > 1e-12) {
      pass = false;
      detail = "momentum update deviates from the closed form";
    }
  }
  report(3, pass,
         "clustering oracle: 50 instances equal an independent Lloyd reference exactly; "
         "distortion monotone; EMA matches the closed form incl. alpha in {0,1} (" + detail + ")",
         elapsed(t0));
}

// ---- criterion 4: metrics oracle --------------------------------------------------

void criterion_metrics() {
  const auto t0 = Clock::now();
  bool pass = true;
  Rng rng(0x3E7);
  for (int trial = 0; trial < 100 && pass; ++trial) {
    const std::size_t n = 20 + rng.index(81);
    std::vector<double> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = rng.uniform(-3.0, 3.0);
      labels[i] = rng.uniform() < 0.1 ? 0.0 : rng.uniform(-3.0, 3.0);
    }
    for (BaConvention conv : {BaConvention::A, BaConvention::B}) {
      std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (conv == BaConvention::B && labels[i] == 0.0) continue;
        const bool p = preds[i] >= 0.0;
        const bool t = conv == BaConvention::A ? labels[i] >= 0.0 : labels[i] > 0.0;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
        tn += !p && !t;
      }
      BinaryScore got = binary_acc_f1(preds, labels, conv);
      const double acc = double(tp + tn) / double(tp + fp + fn + tn);
      const double prec = tp + fp ? double(tp) / double(tp + fp) : 0.0;
      const double rec = tp + fn ? double(tp) / double(tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      pass = pass && std::abs(got.accuracy - acc) <= 1e-9 && std::abs(got.f1 - f1) <= 1e-9;
    }
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(preds[i] - labels[i]);
    pass = pass && std::abs(mae(preds, labels) - abs_sum / n) <= 1e-9;
    {
      double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
      for (std::size_t i = 0; i < n; ++i) {
        sx += preds[i];
        sy += labels[i];
        sxy += preds[i] * labels[i];
        sxx += preds[i] * preds[i];
        syy += labels[i] * labels[i];
      }
      const double cov = sxy / n - sx / n * (sy / n);
      const double vx = sxx / n - (sx / n) * (sx / n), vy = syy / n - (sy / n) * (sy / n);
      pass = pass && std::abs(pearson_corr(preds, labels) - cov / std::sqrt(vx * vy)) <= 1e-9;
    }
    // conventions agree whenever no label is exactly zero
    std::vector<double> nz_labels(labels);
    for (double& v : nz_labels)
      if (v == 0.0) v = 1.0;
    BinaryScore a = binary_acc_f1(preds, nz_labels, BaConvention::A);
    BinaryScore b = binary_acc_f1(preds, nz_labels, BaConvention::B);
    pass = pass && a.accuracy == b.accuracy && a.f1 == b.f1;
    // multilabel report vs direct tally
    std::vector<std::array<double, 8>> logits(n);
    std::vector<std::array<int, 4>> bits(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (double& v : logits[i]) v = rng.uniform(-1.0, 1.0);
      for (int& bbit : bits[i]) bbit = rng.uniform() < 0.5;
    }
    MultilabelReport rep = multilabel_report(logits, bits);
    double acc_sum = 0, f1_sum = 0;
    for (std::size_t e = 0; e < 4; ++e) {
      double tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool p = logits[i][2 * e + 1] > logits[i][2 * e];
        const bool t = bits[i][e] == 1;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
        tn += !p && !t;
      }
      const double acc = (tp + tn) / double(n);
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      pass = pass && std::abs(rep.per_emotion[e].accuracy - acc) <= 1e-9 &&
             std::abs(rep.per_emotion[e].f1 - f1) <= 1e-9;
      acc_sum += acc;
      f1_sum += f1;
    }
    pass = pass && std::abs(rep.avg_accuracy - acc_sum / 4) <= 1e-9 &&
           std::abs(rep.avg_f1 - f1_sum / 4) <= 1e-9;
  }
  report(4, pass,
         "metrics oracle: BA (both conventions), F1, MAE, Corr, multilabel vs brute force on "
         "100 random sets, tol 1e-9; A == B without zero labels",
         elapsed(t0));
}

// ---- criteria 5-7: trained models --------------------------------------------------

struct RunResult {
  double acc_best = 0.0;   // test accuracy (classification ACC / regression BA_A) at best ckpt
  double acc_final = 0.0;
  double ratio = 0.0;      // self-clustering tightness of final-epoch test features
  TrainOutcome outcome;
};

double self_cluster_ratio(const Tensor& fused, std::size_t C) {
  KMeansResult km = kmeans(fused, C, 50, 12345);
  const std::size_t n = fused.rows(), d = fused.cols();
  double intra = 0, inter = 0;
  std::size_t ni = 0, nx = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = fused.at(i, k) - fused.at(j, k);
        s += diff * diff;
      }
      s = std::sqrt(s);
      if (km.labels[i] == km.labels[j]) {
        intra += s;
        ++ni;
      } else {
        inter += s;
        ++nx;
      }
    }
  return (intra / static_cast<double>(ni)) / (inter / static_cast<double>(nx));
}

RunResult run_one(const RunConfig& cfg, const Dataset& data, bool want_ratio) {
  RunResult r;
  r.outcome = train_model(cfg, data);  // dataset copied; runs stay independent
  // accuracy column leads the metric row for both tasks: ACC / BA_A
  r.acc_best = r.outcome.test_best.metrics[0];
  r.acc_final = r.outcome.test_final.metrics[0];
  if (want_ratio) {
    Dataset test_copy = data;
    apply_norm_stats(test_copy.test, r.outcome.norm);
    Tensor fused =
        fused_features(r.outcome.final_params, r.outcome.model_config, test_copy.test, 1);
    r.ratio = self_cluster_ratio(fused, 4);
  }
  return r;
}

void criterion_toy_learning(const Dataset& cls_data, const fs::path& work) {
  const auto t0 = Clock::now();
  RunConfig cfg = base_config(Task::Classification, (work / "cls" / "manifest.json").string(), 30, 1);
  RunResult r = run_one(cfg, cls_data, false);
  const double secs = elapsed(t0);
  const bool pass = r.acc_best >= 0.90 && secs < 900.0;
  std::ostringstream what;
  what << "toy end-to-end learning: d_s=32 K=4 scales{1,2,3} 30 epochs, held-out accuracy "
       << r.acc_best << " (final " << r.acc_final << ") >= 0.90, budget 900s";
  report(5, pass, what.str(), secs);
}

void criterion_ablation(const Dataset& cls_data, const fs::path& work, std::size_t width) {
  const auto t0 = Clock::now();
  const std::string manifest = (work / "cls" / "manifest.json").string();
  std::vector<double> acc_multi(5), acc_single(5);
  std::vector<std::function<void()>> jobs;
  for (std::uint64_t s = 0; s < 5; ++s) {
    jobs.push_back([&, s] {
      RunConfig cfg = base_config(Task::Classification, manifest, 12, s + 1);
      acc_multi[s] = run_one(cfg, cls_data, false).acc_best;
    });
    jobs.push_back([&, s] {
      RunConfig cfg = base_config(Task::Classification, manifest, 12, s + 1);
      cfg.scales = {1};
      acc_single[s] = run_one(cfg, cls_data, false).acc_best;
    });
  }
  run_jobs(std::move(jobs), width);
  double m_multi = 0, m_single = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    m_multi += acc_multi[s] / 5;
    m_single += acc_single[s] / 5;
  }
  const bool pass = m_multi > m_single && (m_multi - m_single) >= 0.02;
  std::ostringstream what;
  what << "multi-scale ablation over 5 seeds: mean acc scales{1,2,3}=" << m_multi
       << " vs scales{1}=" << m_single << ", gap " << (m_multi - m_single) << " >= 0.02";
  report(6, pass, what.str(), elapsed(t0));
}

void criterion_s3c_effect(const Dataset& reg_data, const fs::path& work, std::size_t width) {
  const auto t0 = Clock::now();
  const std::string manifest = (work / "reg" / "manifest.json").string();
  std::vector<RunResult> on(5), off(5);
  std::vector<std::function<void()>> jobs;
  for (std::uint64_t s = 0; s < 5; ++s) {
    jobs.push_back([&, s] {
      RunConfig cfg = base_config(Task::Regression, manifest, 16, s + 1);
      off[s] = run_one(cfg, reg_data, true);
    });
    jobs.push_back([&, s] {
      RunConfig cfg = base_config(Task::Regression, manifest, 16, s + 1);
      cfg.s3c_enabled = true;
      cfg.cluster_counts = {4};
      cfg.s3c_start_epoch = 5;
      cfg.kmeans_iters = 25;
      cfg.kmeans_seed = 7;
      cfg.s3c_coeff = 1.0;
      on[s] = run_one(cfg, reg_data, true);
    });
  }
  run_jobs(std::move(jobs), width);
  int tighter = 0;
  double acc_drop = 0.0;
  std::ostringstream detail;
  for (std::uint64_t s = 0; s < 5; ++s) {
    tighter += on[s].ratio < off[s].ratio;
    acc_drop += (off[s].acc_best - on[s].acc_best) / 5.0;
    detail << " s" << s + 1 << ":" << on[s].ratio << "<" << off[s].ratio
           << (on[s].ratio < off[s].ratio ? "+" : "-");
  }
  const bool pass = tighter >= 4 && acc_drop <= 0.01;
  std::ostringstream what;
  what << "clustering-loss effect over 5 seeds: feature ratio lower with it on for " << tighter
       << "/5 seeds (need >=4); mean accuracy drop " << acc_drop << " <= 0.01;" << detail.str();
  report(7, pass, what.str(), elapsed(t0));
}

// ---- criterion 8: determinism and persistence --------------------------------------

std::string rows_to_csv(const std::vector<TrainRow>& rows) {
  std::ostringstream os;
  os << "epoch,split,loss,task_loss,s3c_loss\n";
  for (const TrainRow& r : rows)
    os << r.epoch << ',' << r.split << ',' << csv_num(r.loss) << ',' << csv_num(r.task_loss)
       << ',' << csv_num(r.s3c_loss) << "\n";
  return os.str();
}

void criterion_determinism() {
  const auto t0 = Clock::now();
  Dataset ds = svtest::make_synth_dataset(300, 21, Task::Classification);
  RunConfig cfg = base_config(Task::Classification, "", 4, 5);
  cfg.batch_size = 32;
  cfg.d_s = 16;
  cfg.text.hidden = cfg.video.hidden = cfg.audio.hidden = 16;
  cfg.text.ffn = cfg.video.ffn = cfg.audio.ffn = 32;
  cfg.fusion_ffn = 32;
  cfg.s3c_enabled = true;
  cfg.cluster_counts = {3};
  cfg.s3c_start_epoch = 1;
  cfg.kmeans_iters = 15;
  cfg.kmeans_seed = 2;

  TrainOutcome a = train_model(cfg, ds);
  TrainOutcome b = train_model(cfg, ds);
  bool pass = rows_to_csv(a.rows) == rows_to_csv(b.rows);

  TrainOutcome partial = train_model(cfg, ds, /*stop_after_epoch=*/3);
  CheckpointData ck = make_checkpoint(cfg, partial, false);
  const fs::path path = fs::temp_directory_path() / "svlad_acceptance_resume.ckpt";
  save_checkpoint(path, ck);
  CheckpointData loaded = load_checkpoint(path);
  fs::remove(path);
  TrainOutcome resumed = train_model(cfg, ds, SIZE_MAX, &loaded);

  double worst = 0.0;
  std::size_t matched = 0;
  for (const TrainRow& r : resumed.rows) {
    if (r.epoch != 3 || (r.split != "train" && r.split != "valid")) continue;
    for (const TrainRow& f : a.rows)
      if (f.epoch == 3 && f.split == r.split) {
        worst = std::max({worst, std::abs(f.loss - r.loss), std::abs(f.task_loss - r.task_loss),
                          std::abs(f.s3c_loss - r.s3c_loss)});
        ++matched;
      }
  }
  pass = pass && matched == 2 && worst <= 1e-12;
  std::ostringstream what;
  what << "determinism and persistence: identical loss CSVs across reruns; resume after "
       << "save/load reproduces the next epoch within " << worst << " (tol 1e-12)";
  report(8, pass, what.str(), elapsed(t0));
}

}  // namespace

int main() {
  const fs::path work = fs::path("acceptance_work");
  fs::remove_all(work);
  fs::create_directories(work);

  const std::size_t width = run_parallelism();
  std::printf("acceptance: staging datasets (run parallelism %zu)\n", width);
  std::fflush(stdout);

  SynthSpec cls_spec;
  cls_spec.n = 2000;
  cls_spec.seed = 1;
  cls_spec.task = Task::Classification;
  write_dataset(work / "cls", cls_spec, synth_generate(cls_spec), true);
  Dataset cls_data = load_dataset(work / "cls" / "manifest.json");

  SynthSpec reg_spec = cls_spec;
  reg_spec.task = Task::Regression;
  write_dataset(work / "reg", reg_spec, synth_generate(reg_spec), true);
  Dataset reg_data = load_dataset(work / "reg" / "manifest.json");

  criterion_gradients();
  criterion_structure();
  criterion_clustering();
  criterion_metrics();
  criterion_toy_learning(cls_data, work);
  criterion_ablation(cls_data, work, width);
  criterion_s3c_effect(reg_data, work, width);
  criterion_determinism();

  std::printf("ACCEPTANCE: %d/8 criteria passed\n", 8 - failures);
  return failures;
}
