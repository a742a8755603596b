// Operator surface: data generation, training, evaluation, gradient
// verification, and inspection dumps that produce plot-ready CSV.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "svlad/config.hpp"
#include "svlad/csv.hpp"
#include "svlad/data.hpp"
#include "svlad/gradcheck_suite.hpp"
#include "svlad/pca.hpp"
#include "svlad/synth.hpp"
#include "svlad/train.hpp"

namespace fs = std::filesystem;
using namespace svlad;

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_report_csv(const fs::path& path, const RunConfig& cfg, const TrainOutcome& out) {
  CsvFile csv(path);
  csv.comment("config_hash=" + config_hash_hex(cfg));
  std::vector<std::string> header{"epoch", "split", "loss", "task_loss", "s3c_loss"};
  for (const std::string& m : metric_columns(cfg.task)) header.push_back(m);
  csv.row(header);
  for (const TrainRow& row : out.rows) {
    std::vector<std::string> cells{std::to_string(row.epoch), row.split, csv_num(row.loss),
                                   csv_num(row.task_loss), csv_num(row.s3c_loss)};
    for (double m : row.metrics) cells.push_back(csv_num(m));
    csv.row(cells);
  }
}

void write_s3c_csv(const fs::path& path, const RunConfig& cfg, const TrainOutcome& out) {
  CsvFile csv(path);
  csv.comment("config_hash=" + config_hash_hex(cfg));
  csv.row({"epoch", "cluster_count", "distortion", "center_shift_norm"});
  for (const S3cRow& row : out.s3c_rows)
    csv.row({std::to_string(row.epoch), std::to_string(row.cluster_count),
             csv_num(row.distortion), csv_num(row.center_shift)});
}

void print_metrics(const std::string& tag, Task task, const EvalOutput& ev) {
  std::cout << tag << ": task_loss=" << csv_num(ev.task_loss);
  const auto cols = metric_columns(task);
  for (std::size_t i = 0; i < cols.size(); ++i)
    std::cout << " " << cols[i] << "=" << csv_num(ev.metrics[i]);
  std::cout << "\n";
}

int cmd_gen_data(const std::string& out_dir, std::size_t n, std::uint64_t seed,
                 const std::string& task, bool force) {
  SynthSpec spec;
  spec.n = n;
  spec.seed = seed;
  if (task == "regression") spec.task = Task::Regression;
  else if (task == "classification") spec.task = Task::Classification;
  else throw ConfigError("gen-data supports regression or classification");
  auto samples = synth_generate(spec);
  write_dataset(out_dir, spec, samples, force);
  std::cout << "wrote " << n << " samples to " << out_dir << " (70/10/20 split)\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume_path,
              std::size_t stop_after) {
  RunConfig cfg = load_run_config(config_path);
  Dataset data = load_dataset(cfg.manifest);

  CheckpointData resume;
  const CheckpointData* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_checkpoint(resume_path);
    resume_ptr = &resume;
  }
  TrainOutcome out = train_model(cfg, std::move(data), stop_after, resume_ptr);

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    write_report_csv(dir / "report.csv", cfg, out);
    if (cfg.s3c_enabled) write_s3c_csv(dir / "s3c_report.csv", cfg, out);
    save_checkpoint(dir / "last.ckpt", make_checkpoint(cfg, out, /*best=*/false));
    save_checkpoint(dir / "best.ckpt", make_checkpoint(cfg, out, /*best=*/true));
    std::cout << "artifacts in " << cfg.out_dir << " (report.csv, last.ckpt, best.ckpt";
    if (cfg.s3c_enabled) std::cout << ", s3c_report.csv";
    std::cout << ")\n";
  }
  std::cout << "epochs_done=" << out.epochs_done << " best_epoch=" << out.best_epoch
            << " best_valid_metric=" << csv_num(out.best_metric) << "\n";
  if (out.evaluated_test) {
    print_metrics("test(final)", cfg.task, out.test_final);
    print_metrics("test(best)", cfg.task, out.test_best);
  }
  return 0;
}

struct LoadedCheckpoint {
  RunConfig cfg;
  CheckpointData ck;
  Dataset data;  // normalized with the checkpoint's stored statistics
  ModelConfig mcfg;
};

LoadedCheckpoint load_run(const std::string& checkpoint_path) {
  LoadedCheckpoint lr;
  lr.ck = load_checkpoint(checkpoint_path);
  nlohmann::json cfg_json = nlohmann::json::parse(lr.ck.config_json);
  lr.cfg = parse_run_config(cfg_json);
  if (config_hash(lr.cfg) != lr.ck.config_hash)
    throw IoError("checkpoint config hash does not match its embedded config");
  lr.data = load_dataset(lr.cfg.manifest);
  lr.mcfg = resolve_model_config(lr.cfg, lr.data.info);
  NormStats ns = norm_from_checkpoint(lr.ck);
  apply_norm_stats(lr.data.train, ns);
  apply_norm_stats(lr.data.valid, ns);
  apply_norm_stats(lr.data.test, ns);
  return lr;
}

const std::vector<MultimodalSample>& pick_split(const Dataset& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "valid") return data.valid;
  if (split == "test") return data.test;
  throw ConfigError("split must be train, valid, or test");
}

int cmd_eval(const std::string& checkpoint_path, const std::string& split,
             const std::string& out_csv) {
  LoadedCheckpoint lr = load_run(checkpoint_path);
  EvalOutput ev =
      evaluate_split(lr.ck.params, lr.mcfg, pick_split(lr.data, split), worker_count());
  print_metrics(split, lr.cfg.task, ev);
  if (!out_csv.empty()) {
    CsvFile csv(out_csv);
    csv.comment("config_hash=" + hash_hex(lr.ck.config_hash));
    std::vector<std::string> header{"split", "task_loss"};
    for (const std::string& m : metric_columns(lr.cfg.task)) header.push_back(m);
    csv.row(header);
    std::vector<std::string> cells{split, csv_num(ev.task_loss)};
    for (double m : ev.metrics) cells.push_back(csv_num(m));
    csv.row(cells);
  }
  return 0;
}

int cmd_gradcheck(const std::string& config_path, int trials) {
  // the suite runs on its built-in toy dimensions; --config only needs to
  // parse cleanly when provided, keeping run scripts uniform
  if (!config_path.empty()) (void)load_run_config(config_path);
  bool ok = true;
  for (const GradSuiteCheck& check : gradient_suite()) {
    double worst = 0.0;
    bool check_ok = true;
    for (int t = 0; t < trials && check_ok; ++t) {
      GradCheckReport rep = check.run(static_cast<std::uint64_t>(t));
      worst = std::max(worst, rep.max_rel_err);
      if (!rep.pass) {
        check_ok = false;
        std::cout << "[FAIL] " << check.name << " trial " << t << " rel_err=" << rep.max_rel_err
                  << " at " << rep.worst_input << "[" << rep.worst_index << "]\n";
      }
    }
    if (check_ok) std::cout << "[ok] " << check.name << " max_rel_err=" << csv_num(worst) << "\n";
    ok = ok && check_ok;
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return ok ? 0 : 1;
}

int cmd_inspect_vlad(const std::string& checkpoint_path, const std::string& sample_id,
                     const std::string& out_csv) {
  LoadedCheckpoint lr = load_run(checkpoint_path);
  const MultimodalSample* sample = nullptr;
  for (const auto* split : {&lr.data.train, &lr.data.valid, &lr.data.test})
    for (const auto& s : *split)
      if (s.id == sample_id) sample = &s;
  if (!sample) throw DataError("sample id '" + sample_id + "' not found in any split");

  Graph g(/*recording=*/false);
  ParamBinder bind(g, lr.ck.params);
  std::vector<VladCaptureEntry> capture;
  ForwardResult fr = model_forward(g, bind, lr.mcfg, *sample, &capture);

  std::string tag_list;
  for (const RowTag& tag : fr.tags) {
    if (!tag_list.empty()) tag_list += ',';
    tag_list += format_row_tag(tag);
  }
  auto emit = [&](std::ostream& os) {
    os << "# config_hash=" << hash_hex(lr.ck.config_hash) << "\n";
    os << "# sample=" << sample_id << "\n";
    os << "# rows=" << tag_list << "\n";
    os << "modality,scale,token,k,weight\n";
    for (const VladCaptureEntry& e : capture)
      for (std::size_t t = 0; t < e.weights.rows(); ++t)
        for (std::size_t k = 0; k < e.weights.cols(); ++k)
          os << modality_name(e.modality) << ',' << e.scale << ',' << t << ',' << k << ','
             << csv_num(e.weights.at(t, k)) << "\n";
  };
  if (out_csv.empty()) {
    emit(std::cout);
  } else {
    std::ofstream f(out_csv, std::ios::binary);
    if (!f) throw IoError("cannot write " + out_csv);
    emit(f);
  }
  return 0;
}

int cmd_project_features(const std::string& checkpoint_path, const std::string& split,
                         const std::string& out_csv) {
  LoadedCheckpoint lr = load_run(checkpoint_path);
  const auto& samples = pick_split(lr.data, split);
  if (samples.empty()) throw DataError("split '" + split + "' is empty");
  Tensor fused = fused_features(lr.ck.params, lr.mcfg, samples, worker_count());
  Pca2 pca = pca_top2(fused);

  // cluster column: nearest center of the first stored clustering, -1 if none
  const ClusterState* st = nullptr;
  for (const ClusterState& c : lr.ck.clusters)
    if (c.active && !c.Z.empty()) {
      st = &c;
      break;
    }
  CsvFile csv(out_csv);
  csv.comment("config_hash=" + hash_hex(lr.ck.config_hash));
  csv.row({"x", "y", "label", "cluster"});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::string label;
    switch (lr.cfg.task) {
      case Task::Regression: label = csv_num(samples[i].label.score); break;
      case Task::Classification: label = std::to_string(samples[i].label.cls); break;
      case Task::Multilabel: {
        int packed = 0;
        for (std::size_t e = 0; e < 4; ++e) packed |= samples[i].label.bits[e] << e;
        label = std::to_string(packed);
        break;
      }
    }
    long cluster = -1;
    if (st) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < st->C; ++c) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < fused.cols(); ++j) {
          const double diff = fused.at(i, j) - st->Z.at(c, j);
          d2 += diff * diff;
        }
        if (d2 < best) {
          best = d2;
          cluster = static_cast<long>(c);
        }
      }
    }
    csv.row({csv_num(pca.projected.at(i, 0)), csv_num(pca.projected.at(i, 1)), label,
             std::to_string(cluster)});
  }
  std::cout << "wrote " << samples.size() << " rows to " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ScaleVLAD multimodal fusion: training, evaluation, and inspection"};
  app.require_subcommand(1);

  std::string gd_out, gd_task = "classification";
  std::size_t gd_n = 2000;
  std::uint64_t gd_seed = 1;
  bool gd_force = false;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic multimodal dataset");
  gen->add_option("--out", gd_out, "output directory")->required();
  gen->add_option("--n", gd_n, "number of samples");
  gen->add_option("--seed", gd_seed, "generator seed");
  gen->add_option("--task", gd_task, "regression|classification");
  gen->add_flag("--force", gd_force, "overwrite a non-empty directory");

  std::string tr_config, tr_resume;
  std::size_t tr_stop = SIZE_MAX;
  auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
  train_cmd->add_option("--config", tr_config, "run config JSON")->required();
  train_cmd->add_option("--resume", tr_resume, "checkpoint to resume from");
  train_cmd->add_option("--stop-after-epoch", tr_stop, "stop early after this many epochs");

  std::string ev_ckpt, ev_split = "test", ev_out;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--split", ev_split, "train|valid|test");
  eval_cmd->add_option("--out", ev_out, "metrics CSV path");

  std::string gc_config;
  int gc_trials = 20;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
  gc->add_option("--config", gc_config, "run config JSON (optional)");
  gc->add_option("--trials", gc_trials, "random trials per operation");

  std::string iv_ckpt, iv_sample, iv_out;
  auto* iv = app.add_subcommand("inspect-vlad", "dump assignment weights for one sample");
  iv->add_option("--checkpoint", iv_ckpt, "checkpoint file")->required();
  iv->add_option("--sample", iv_sample, "sample id")->required();
  iv->add_option("--out", iv_out, "CSV path (stdout when omitted)");

  std::string pf_ckpt, pf_split = "train", pf_out;
  auto* pf = app.add_subcommand("project-features", "2-D PCA of fused features");
  pf->add_option("--checkpoint", pf_ckpt, "checkpoint file")->required();
  pf->add_option("--split", pf_split, "train|valid|test");
  pf->add_option("--out", pf_out, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gd_out, gd_n, gd_seed, gd_task, gd_force);
    if (train_cmd->parsed()) return cmd_train(tr_config, tr_resume, tr_stop);
    if (eval_cmd->parsed()) return cmd_eval(ev_ckpt, ev_split, ev_out);
    if (gc->parsed()) return cmd_gradcheck(gc_config, gc_trials);
    if (iv->parsed()) return cmd_inspect_vlad(iv_ckpt, iv_sample, iv_out);
    if (pf->parsed()) return cmd_project_features(pf_ckpt, pf_split, pf_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
