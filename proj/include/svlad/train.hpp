#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "svlad/checkpoint.hpp"
#include "svlad/config.hpp"
#include "svlad/data.hpp"
#include "svlad/metrics.hpp"
#include "svlad/model.hpp"
#include "svlad/optimizer.hpp"
#include "svlad/s3c.hpp"

namespace svlad {

// Worker count for batch-internal parallelism. Deterministic for a fixed
// value; defaults to 1 so results never depend on the machine.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("SVLD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

namespace detail {

// Contiguous chunks, one per worker; chunk results must be combined in chunk
// order by the caller to keep floating-point reductions stable. The first
// chunk's exception (in chunk order) is rethrown after the join.
template <class Fn>
void run_chunked(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n == 0 ? 1 : n));
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t per = (n + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t c = 0; c < workers; ++c) {
    const std::size_t begin = c * per, end = std::min(n, begin + per);
    if (begin >= end) break;
    pool.emplace_back([&fn, &errors, c, begin, end] {
      try {
        fn(c, begin, end);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// Fused features r_hat for a whole split, parameters frozen (forward only).
inline Tensor fused_features(const ModelParams& params, const ModelConfig& mcfg,
                             const std::vector<MultimodalSample>& samples, std::size_t workers) {
  Tensor out({std::max<std::size_t>(samples.size(), 1), mcfg.d_s});
  detail::run_chunked(samples.size(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Graph g(/*recording=*/false);
      ParamBinder bind(g, params);
      ForwardResult fr = model_forward(g, bind, mcfg, samples[i]);
      const Tensor& fused = g.value(fr.fused);
      std::copy(fused.data(), fused.data() + mcfg.d_s, out.row(i));
    }
  });
  return out;
}

// ---- evaluation ----------------------------------------------------------------

inline std::vector<std::string> metric_columns(Task task) {
  switch (task) {
    case Task::Regression:
      return {"BA_A", "BA_B", "F1_A", "F1_B", "MAE", "Corr"};
    case Task::Classification:
      return {"ACC", "F1"};
    case Task::Multilabel: {
      std::vector<std::string> cols;
      for (const char* e : emotion_names()) {
        cols.push_back(std::string("Acc_") + e);
        cols.push_back(std::string("F1_") + e);
      }
      cols.push_back("Acc_avg");
      cols.push_back("F1_avg");
      return cols;
    }
  }
  throw InternalError("unreachable task");
}

// Raw predictions for one split, in sample order.
struct Predictions {
  std::vector<double> scores;                   // regression
  std::vector<std::size_t> classes;             // classification argmax
  std::vector<std::array<double, 8>> logits8;   // multilabel
};

inline double macro_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth,
                       std::size_t classes) {
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && truth[i] == c;
      fp += pred[i] == c && truth[i] != c;
      fn += pred[i] != c && truth[i] == c;
    }
    const double precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(classes);
}

inline std::vector<double> task_metric_values(Task task, const Predictions& pred,
                                              const std::vector<Label>& labels) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  switch (task) {
    case Task::Regression: {
      std::vector<double> truth(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) truth[i] = labels[i].score;
      std::vector<double> out(6, nan);
      try {
        BinaryScore a = binary_acc_f1(pred.scores, truth, BaConvention::A);
        out[0] = a.accuracy;
        out[2] = a.f1;
      } catch (const MetricError&) {}
      try {
        BinaryScore b = binary_acc_f1(pred.scores, truth, BaConvention::B);
        out[1] = b.accuracy;
        out[3] = b.f1;
      } catch (const MetricError&) {}
      out[4] = mae(pred.scores, truth);
      try {
        out[5] = pearson_corr(pred.scores, truth);
      } catch (const MetricError&) {}
      return out;
    }
    case Task::Classification: {
      std::vector<std::size_t> truth(labels.size());
      std::size_t hits = 0, classes = 2;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        truth[i] = labels[i].cls;
        classes = std::max(classes, labels[i].cls + 1);
        classes = std::max(classes, pred.classes[i] + 1);
        hits += pred.classes[i] == labels[i].cls;
      }
      return {static_cast<double>(hits) / static_cast<double>(labels.size()),
              macro_f1(pred.classes, truth, classes)};
    }
    case Task::Multilabel: {
      std::vector<std::array<int, 4>> truth(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) truth[i] = labels[i].bits;
      MultilabelReport rep = multilabel_report(pred.logits8, truth);
      std::vector<double> out;
      for (const BinaryScore& s : rep.per_emotion) {
        out.push_back(s.accuracy);
        out.push_back(s.f1);
      }
      out.push_back(rep.avg_accuracy);
      out.push_back(rep.avg_f1);
      return out;
    }
  }
  throw InternalError("unreachable task");
}

inline void record_prediction(Predictions& pred, std::size_t i, Task task, const Tensor& output) {
  switch (task) {
    case Task::Regression:
      pred.scores[i] = output[0];
      break;
    case Task::Classification: {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < output.size(); ++c)
        if (output[c] > output[arg]) arg = c;
      pred.classes[i] = arg;
      break;
    }
    case Task::Multilabel: {
      for (std::size_t k = 0; k < 8; ++k) pred.logits8[i][k] = output[k];
      break;
    }
  }
}

struct EvalOutput {
  double task_loss = 0.0;
  std::vector<double> metrics;
  Predictions predictions;
  std::vector<Label> labels;
};

inline EvalOutput evaluate_split(const ModelParams& params, const ModelConfig& mcfg,
                                 const std::vector<MultimodalSample>& samples,
                                 std::size_t workers) {
  EvalOutput out;
  const std::size_t n = samples.size();
  if (n == 0) throw DataError("cannot evaluate an empty split");
  out.predictions.scores.assign(mcfg.task == Task::Regression ? n : 0, 0.0);
  out.predictions.classes.assign(mcfg.task == Task::Classification ? n : 0, 0);
  out.predictions.logits8.assign(mcfg.task == Task::Multilabel ? n : 0, {});
  out.labels.reserve(n);
  for (const auto& s : samples) out.labels.push_back(s.label);

  std::vector<double> losses(n, 0.0);
  detail::run_chunked(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Graph g(/*recording=*/false);
      ParamBinder bind(g, params);
      ForwardResult fr = model_forward(g, bind, mcfg, samples[i]);
      losses[i] = g.value(task_loss(g, fr.output, samples[i].label, mcfg.task))[0];
      record_prediction(out.predictions, i, mcfg.task, g.value(fr.output));
    }
  });
  for (double l : losses) out.task_loss += l;
  out.task_loss /= static_cast<double>(n);
  out.metrics = task_metric_values(mcfg.task, out.predictions, out.labels);
  return out;
}

// ---- training --------------------------------------------------------------------

struct TrainRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0, task_loss = 0.0, s3c_loss = 0.0;
  std::vector<double> metrics;
};

struct S3cRow {
  std::size_t epoch = 0;
  std::size_t cluster_count = 0;
  double distortion = 0.0;
  double center_shift = 0.0;
};

struct TrainOutcome {
  ModelConfig model_config;
  NormStats norm;
  ModelParams final_params, best_params;
  AdamState final_adam, best_adam;
  std::vector<ClusterState> final_clusters, best_clusters;
  std::size_t best_epoch = 0;
  double best_metric = std::numeric_limits<double>::quiet_NaN();
  std::size_t epochs_done = 0;
  std::vector<TrainRow> rows;
  std::vector<S3cRow> s3c_rows;
  EvalOutput test_final, test_best;
  bool evaluated_test = false;
};

namespace detail {

inline bool metric_improves(Task task, double candidate, double incumbent) {
  if (std::isnan(candidate)) return false;
  if (std::isnan(incumbent)) return true;
  return task == Task::Regression ? candidate < incumbent : candidate > incumbent;
}

// validation-selection metric: lowest MAE for regression, highest (average) F1 otherwise
inline double selection_metric(Task task, const std::vector<double>& metrics) {
  switch (task) {
    case Task::Regression: return metrics[4];
    case Task::Classification: return metrics[1];
    case Task::Multilabel: return metrics.back();
  }
  throw InternalError("unreachable task");
}

inline std::string grad_norm_digest(const GradMap& grads) {
  std::vector<std::pair<double, std::string>> norms;
  for (const auto& [name, g] : grads) {
    double sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
    norms.emplace_back(std::sqrt(sq), name);
  }
  std::sort(norms.rbegin(), norms.rend());
  std::string out = "total=" + std::to_string(global_grad_norm(grads));
  for (std::size_t i = 0; i < std::min<std::size_t>(5, norms.size()); ++i)
    out += ", " + norms[i].second + "=" + std::to_string(norms[i].first);
  return out;
}

}  // namespace detail

// The epoch loop: optional S3C refresh at each epoch start (from the start
// epoch on), shuffled mini-batches, per-sample forward/backward with batch
// gradients averaged, global-norm clipping, Adam with the linear schedule.
// Per-epoch rows report the train split (running metrics over the epoch's
// own predictions) and the validation split; the best-validation state is
// retained. stop_after_epoch truncates the loop for resume tests.
inline TrainOutcome train_model(const RunConfig& cfg, Dataset dataset,
                                std::size_t stop_after_epoch = SIZE_MAX,
                                const CheckpointData* resume = nullptr, bool eval_test = true) {
  TrainOutcome out;
  out.model_config = resolve_model_config(cfg, dataset.info);
  const ModelConfig& mcfg = out.model_config;
  if (dataset.train.empty()) throw DataError("training split is empty");

  out.norm = compute_norm_stats(dataset.train, dataset.info);
  apply_norm_stats(dataset.train, out.norm);
  apply_norm_stats(dataset.valid, out.norm);
  apply_norm_stats(dataset.test, out.norm);

  ModelParams params;
  AdamState adam;
  std::vector<ClusterState> clusters;
  std::size_t epoch_begin = 0;
  if (resume) {
    if (resume->config_hash != config_hash(cfg))
      throw ConfigError("checkpoint was written under a different config (hash mismatch)");
    params = resume->params;
    adam = resume->adam;
    clusters = resume->clusters;
    epoch_begin = resume->epoch_next;
  } else {
    params = init_params(mcfg, cfg.seed);
    for (std::size_t c : cfg.cluster_counts)
      if (cfg.s3c_enabled) {
        ClusterState st;
        st.C = c;
        clusters.push_back(st);
      }
  }

  const std::size_t workers = worker_count();
  const std::size_t steps_per_epoch = (dataset.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(cfg.epochs * steps_per_epoch);

  std::vector<std::string> train_ids;
  for (const auto& s : dataset.train) train_ids.push_back(s.id);

  out.best_params = params;
  out.best_adam = adam;
  out.best_clusters = clusters;

  const std::size_t epoch_end = std::min<std::size_t>(cfg.epochs, stop_after_epoch);
  for (std::size_t epoch = epoch_begin; epoch < epoch_end; ++epoch) {
    // S3C refresh with frozen parameters, once per epoch from the start epoch
    if (cfg.s3c_enabled && epoch >= cfg.s3c_start_epoch) {
      bool first = false;
      for (const ClusterState& st : clusters) first = first || !st.active;
      if (first || (epoch - cfg.s3c_start_epoch) % cfg.s3c_refresh_every == 0) {
        Tensor feats = fused_features(params, mcfg, dataset.train, workers);
        for (ClusterState& st : clusters) {
          RefreshStats stats =
              refresh_state(st, feats, train_ids, cfg.kmeans_iters,
                            mix_seed(cfg.kmeans_seed, epoch, st.C));
          out.s3c_rows.push_back({epoch, st.C, stats.distortion, stats.center_shift});
        }
      }
    }
    const bool s3c_live = cfg.s3c_enabled && !clusters.empty() && clusters.front().active;

    auto batches =
        make_batches(dataset.train, dataset.info, cfg.batch_size,
                     mix_seed(cfg.seed, 0xBA7C4ull, epoch), /*shuffle=*/true);

    double ep_total = 0.0, ep_task = 0.0, ep_s3c = 0.0;
    Predictions ep_pred;
    ep_pred.scores.assign(mcfg.task == Task::Regression ? dataset.train.size() : 0, 0.0);
    ep_pred.classes.assign(mcfg.task == Task::Classification ? dataset.train.size() : 0, 0);
    ep_pred.logits8.assign(mcfg.task == Task::Multilabel ? dataset.train.size() : 0, {});
    std::vector<Label> ep_labels(dataset.train.size());
    std::size_t seen = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      const std::size_t B = batch.size();
      const double inv_b = 1.0 / static_cast<double>(B);

      const std::size_t chunk_count = std::max<std::size_t>(1, std::min(workers, B));
      std::vector<GradMap> chunk_grads(chunk_count);
      std::vector<std::array<double, 3>> chunk_losses(chunk_count, {0.0, 0.0, 0.0});
      try {
        detail::run_chunked(B, workers, [&](std::size_t chunk, std::size_t begin,
                                            std::size_t end) {
          GradMap& grads = chunk_grads[chunk];
          for (std::size_t i = begin; i < end; ++i) {
            PreparedSample s = batch_sample(batch, i, dataset.info);
            Graph g;
            ParamBinder bind(g, params);
            ForwardResult fr = model_forward(g, bind, mcfg, s);
            Var loss = task_loss(g, fr.output, s.label, mcfg.task);
            const double task_val = g.value(loss)[0];
            double s3c_val = 0.0;
            if (s3c_live) {
              Var s3c = multi_s3c(g, fr.fused, clusters, s.id);
              if (cfg.s3c_coeff != 1.0) s3c = g.scale(s3c, cfg.s3c_coeff);
              s3c_val = g.value(s3c)[0];
              loss = g.add(loss, s3c);
            }
            record_prediction(ep_pred, seen + i, mcfg.task, g.value(fr.output));
            ep_labels[seen + i] = s.label;
            g.backward(loss, inv_b);
            for (auto& [name, grad] : g.named_grads()) {
              auto it = grads.find(name);
              if (it == grads.end()) grads.emplace(name, std::move(grad));
              else
                for (std::size_t k = 0; k < grad.size(); ++k) it->second[k] += grad[k];
            }
            chunk_losses[chunk][0] += task_val + s3c_val;
            chunk_losses[chunk][1] += task_val;
            chunk_losses[chunk][2] += s3c_val;
          }
        });
      } catch (const NonFiniteError& e) {
        GradMap partial;
        for (GradMap& cg : chunk_grads)
          for (auto& [name, grad] : cg)
            if (!partial.count(name)) partial.emplace(name, std::move(grad));
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(bi) + " (" + e.what() +
                         "); gradient norms: " + detail::grad_norm_digest(partial));
      }

      GradMap grads = std::move(chunk_grads[0]);
      for (std::size_t c = 1; c < chunk_count; ++c)
        for (auto& [name, grad] : chunk_grads[c]) {
          auto it = grads.find(name);
          if (it == grads.end()) grads.emplace(name, std::move(grad));
          else
            for (std::size_t k = 0; k < grad.size(); ++k) it->second[k] += grad[k];
        }
      double batch_total = 0.0, batch_task = 0.0, batch_s3c = 0.0;
      for (std::size_t c = 0; c < chunk_count; ++c) {
        batch_total += chunk_losses[c][0];
        batch_task += chunk_losses[c][1];
        batch_s3c += chunk_losses[c][2];
      }
      if (!std::isfinite(batch_total))
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(bi) + "; gradient norms: " +
                         detail::grad_norm_digest(grads));

      // batch mean: backward was seeded with 1/B, losses averaged here
      ep_total += batch_total;
      ep_task += batch_task;
      ep_s3c += batch_s3c;
      seen += B;

      const double step = static_cast<double>(epoch * steps_per_epoch + bi);
      const double lr = lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_fraction);
      if (cfg.grad_clip > 0.0) clip_global_norm(grads, cfg.grad_clip);
      adam_step(params, grads, adam, lr);
    }

    const double inv_n = 1.0 / static_cast<double>(dataset.train.size());
    TrainRow train_row{epoch, "train", ep_total * inv_n, ep_task * inv_n, ep_s3c * inv_n, {}};
    train_row.metrics = task_metric_values(mcfg.task, ep_pred, ep_labels);
    out.rows.push_back(std::move(train_row));

    if (!dataset.valid.empty()) {
      EvalOutput ev;
      try {
        ev = evaluate_split(params, mcfg, dataset.valid, workers);
      } catch (const NonFiniteError& e) {
        throw TrainError("non-finite values during validation after epoch " +
                         std::to_string(epoch) + " batch " + std::to_string(batches.size() - 1) +
                         " (" + e.what() + "); gradient norms: unavailable post-step");
      }
      out.rows.push_back({epoch, "valid", ev.task_loss, ev.task_loss, 0.0, ev.metrics});
      const double sel = detail::selection_metric(mcfg.task, ev.metrics);
      if (detail::metric_improves(mcfg.task, sel, out.best_metric)) {
        out.best_metric = sel;
        out.best_epoch = epoch;
        out.best_params = params;
        out.best_adam = adam;
        out.best_clusters = clusters;
      }
    }
    out.epochs_done = epoch + 1;
  }

  if (dataset.valid.empty() || out.rows.empty()) {
    out.best_params = params;
    out.best_adam = adam;
    out.best_clusters = clusters;
    out.best_epoch = out.epochs_done ? out.epochs_done - 1 : 0;
  }
  out.final_params = std::move(params);
  out.final_adam = std::move(adam);
  out.final_clusters = std::move(clusters);

  if (eval_test && !dataset.test.empty()) {
    out.test_final = evaluate_split(out.final_params, mcfg, dataset.test, workers);
    out.test_best = evaluate_split(out.best_params, mcfg, dataset.test, workers);
    out.evaluated_test = true;
    const std::size_t last_epoch = out.epochs_done ? out.epochs_done - 1 : 0;
    out.rows.push_back({last_epoch, "test", out.test_final.task_loss, out.test_final.task_loss,
                        0.0, out.test_final.metrics});
    out.rows.push_back({out.best_epoch, "test_best", out.test_best.task_loss,
                        out.test_best.task_loss, 0.0, out.test_best.metrics});
  }
  return out;
}

inline CheckpointData make_checkpoint(const RunConfig& cfg, const TrainOutcome& out, bool best) {
  CheckpointData ck;
  ck.config_hash = config_hash(cfg);
  ck.config_json = run_config_json(cfg).dump();
  ck.epoch_next = best ? out.best_epoch + 1 : out.epochs_done;
  ck.params = best ? out.best_params : out.final_params;
  ck.adam = best ? out.best_adam : out.final_adam;
  ck.clusters = best ? out.best_clusters : out.final_clusters;
  auto put = [&ck](const std::string& name, const Tensor& t) {
    if (!t.empty()) ck.aux.emplace(name, t);
  };
  put("norm.video.mean", out.norm.video_mean);
  put("norm.video.std", out.norm.video_std);
  put("norm.audio.mean", out.norm.audio_mean);
  put("norm.audio.std", out.norm.audio_std);
  put("norm.text.mean", out.norm.text_mean);
  put("norm.text.std", out.norm.text_std);
  return ck;
}

inline NormStats norm_from_checkpoint(const CheckpointData& ck) {
  NormStats ns;
  auto get = [&ck](const std::string& name, Tensor& t) {
    auto it = ck.aux.find(name);
    if (it != ck.aux.end()) t = it->second;
  };
  get("norm.video.mean", ns.video_mean);
  get("norm.video.std", ns.video_std);
  get("norm.audio.mean", ns.audio_mean);
  get("norm.audio.std", ns.audio_std);
  get("norm.text.mean", ns.text_mean);
  get("norm.text.std", ns.text_std);
  ns.has_text = !ns.text_mean.empty();
  return ns;
}

}  // namespace svlad
