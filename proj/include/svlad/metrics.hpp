#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "svlad/errors.hpp"

namespace svlad {

// Binarization conventions for regression-valued sentiment scores.
//   A: all samples, classes negative (<0) vs non-negative (>=0)
//   B: samples with label exactly 0 dropped, classes negative vs positive
// F1 is the plain binary F1 of the positive class under the convention.
enum class BaConvention { A, B };

struct BinaryScore {
  double accuracy = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline BinaryScore f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  BinaryScore out;
  const std::size_t total = tp + fp + fn + tn;
  out.accuracy = total ? static_cast<double>(tp + tn) / static_cast<double>(total) : 0.0;
  const double precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  out.f1 = (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return out;
}

}  // namespace detail

inline BinaryScore binary_acc_f1(const std::vector<double>& preds,
                                 const std::vector<double>& labels, BaConvention conv) {
  if (preds.size() != labels.size() || preds.empty())
    throw MetricError("predictions and labels must be nonempty and equal-length");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0, kept = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (conv == BaConvention::B && labels[i] == 0.0) continue;
    ++kept;
    const bool pred_pos = preds[i] >= 0.0;
    const bool label_pos = conv == BaConvention::A ? labels[i] >= 0.0 : labels[i] > 0.0;
    if (pred_pos && label_pos) ++tp;
    else if (pred_pos && !label_pos) ++fp;
    else if (!pred_pos && label_pos) ++fn;
    else ++tn;
  }
  if (kept == 0) throw MetricError("convention B undefined: every label is exactly zero");
  return detail::f1_from_counts(tp, fp, fn, tn);
}

inline double mae(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.empty())
    throw MetricError("predictions and labels must be nonempty and equal-length");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - labels[i]);
  return s / static_cast<double>(preds.size());
}

inline double pearson_corr(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size() || preds.size() < 2)
    throw MetricError("correlation needs at least two prediction/label pairs");
  const double n = static_cast<double>(preds.size());
  double mp = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    mp += preds[i];
    ml += labels[i];
  }
  mp /= n;
  ml /= n;
  double cov = 0.0, vp = 0.0, vl = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double dp = preds[i] - mp, dl = labels[i] - ml;
    cov += dp * dl;
    vp += dp * dp;
    vl += dl * dl;
  }
  if (vp == 0.0 || vl == 0.0)
    throw MetricError("correlation undefined: zero variance in predictions or labels");
  return cov / std::sqrt(vp * vl);
}

// Per-emotion accuracy and F1 for the 4-way multilabel task, plus the macro
// averages. Predictions arrive as 4 two-way logit pairs per sample; argmax
// per pair, ties toward "absent".
struct MultilabelReport {
  std::array<BinaryScore, 4> per_emotion;
  double avg_accuracy = 0.0;
  double avg_f1 = 0.0;
};

inline const std::array<const char*, 4>& emotion_names() {
  static const std::array<const char*, 4> names{"happy", "sad", "angry", "neutral"};
  return names;
}

inline MultilabelReport multilabel_report(const std::vector<std::array<double, 8>>& logits,
                                          const std::vector<std::array<int, 4>>& labels) {
  if (logits.size() != labels.size() || logits.empty())
    throw MetricError("predictions and labels must be nonempty and equal-length");
  MultilabelReport rep;
  for (std::size_t e = 0; e < 4; ++e) {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const bool pred = logits[i][2 * e + 1] > logits[i][2 * e];
      const bool truth = labels[i][e] != 0;
      if (pred && truth) ++tp;
      else if (pred && !truth) ++fp;
      else if (!pred && truth) ++fn;
      else ++tn;
    }
    rep.per_emotion[e] = detail::f1_from_counts(tp, fp, fn, tn);
    rep.avg_accuracy += rep.per_emotion[e].accuracy;
    rep.avg_f1 += rep.per_emotion[e].f1;
  }
  rep.avg_accuracy /= 4.0;
  rep.avg_f1 /= 4.0;
  return rep;
}

}  // namespace svlad
