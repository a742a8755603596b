#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "svlad/metrics.hpp"
#include "svlad/random.hpp"

using namespace svlad;

namespace {

// Brute-force oracle: classify each sample, count the confusion cells.
BinaryScore oracle_ba_f1(const std::vector<double>& preds, const std::vector<double>& labels,
                         BaConvention conv) {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (conv == BaConvention::B && labels[i] == 0.0) continue;
    const int pred = preds[i] >= 0.0 ? 1 : 0;
    const int truth = (conv == BaConvention::A ? labels[i] >= 0.0 : labels[i] > 0.0) ? 1 : 0;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
    tn += !pred && !truth;
  }
  BinaryScore s;
  s.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + fp + fn + tn);
  const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("perfect predictions score one under both conventions") {
  std::vector<double> labels{-1.0, 2.0, 0.5, -0.3, 0.0};
  for (BaConvention conv : {BaConvention::A, BaConvention::B}) {
    BinaryScore s = binary_acc_f1(labels, labels, conv);
    CHECK(s.accuracy == 1.0);
    CHECK(s.f1 == 1.0);
  }
}

TEST_CASE("hand enumeration separates the conventions") {
  std::vector<double> labels{-1.0, 0.0, 1.0};
  std::vector<double> preds{-1.0, -1.0, 1.0};
  CHECK(binary_acc_f1(preds, labels, BaConvention::A).accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(binary_acc_f1(preds, labels, BaConvention::B).accuracy == 1.0);
}

TEST_CASE("constant positive predictions on balanced labels hit the coin-flip bound") {
  std::vector<double> labels{-1.0, -2.0, 1.0, 2.0};
  std::vector<double> preds(4, 5.0);
  CHECK(binary_acc_f1(preds, labels, BaConvention::B).accuracy == doctest::Approx(0.5));
}

TEST_CASE("convention B refuses all-zero labels") {
  std::vector<double> labels{0.0, 0.0};
  std::vector<double> preds{1.0, -1.0};
  CHECK_THROWS_AS(binary_acc_f1(preds, labels, BaConvention::B), MetricError);
}

TEST_CASE("conventions coincide when no label is zero") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<double> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform(-3.0, 3.0);
      if (labels[i] == 0.0) labels[i] = 0.5;
      preds[i] = rng.uniform(-3.0, 3.0);
    }
    BinaryScore a = binary_acc_f1(preds, labels, BaConvention::A);
    BinaryScore b = binary_acc_f1(preds, labels, BaConvention::B);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.f1 == b.f1);
  }
}

TEST_CASE("mae and correlation basics") {
  std::vector<double> labels{0.4, -1.2, 2.0, 0.9};
  CHECK(mae(labels, labels) == 0.0);
  CHECK(pearson_corr(labels, labels) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> neg(labels);
  for (double& v : neg) v = -v;
  CHECK(pearson_corr(neg, labels) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(pearson_corr({1.0}, {1.0}), MetricError);
  CHECK_THROWS_AS(pearson_corr({1.0, 1.0}, {0.0, 1.0}), MetricError);
}

TEST_CASE("regression metrics match brute-force oracles on random data") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 100;
    std::vector<double> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = rng.uniform(-3.0, 3.0);
      labels[i] = rng.uniform(-3.0, 3.0);
    }
    // oracle MAE via one-pass absolute sum in reverse order
    double abs_sum = 0.0;
    for (std::size_t i = n; i-- > 0;) abs_sum += std::abs(labels[i] - preds[i]);
    CHECK(std::abs(mae(preds, labels) - abs_sum / n) <= 1e-9);
    // oracle Pearson via the E[xy] - E[x]E[y] form
    double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sx += preds[i];
      sy += labels[i];
      sxy += preds[i] * labels[i];
      sxx += preds[i] * preds[i];
      syy += labels[i] * labels[i];
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    CHECK(std::abs(pearson_corr(preds, labels) - cov / std::sqrt(vx * vy)) <= 1e-9);
    // BA/F1 against the counting oracle under both conventions
    for (BaConvention conv : {BaConvention::A, BaConvention::B}) {
      BinaryScore got = binary_acc_f1(preds, labels, conv);
      BinaryScore want = oracle_ba_f1(preds, labels, conv);
      CHECK(std::abs(got.accuracy - want.accuracy) <= 1e-12);
      CHECK(std::abs(got.f1 - want.f1) <= 1e-12);
    }
  }
}

TEST_CASE("metrics are invariant to sample order") {
  Rng rng(7);
  const std::size_t n = 60;
  std::vector<double> preds(n), labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds[i] = rng.uniform(-3.0, 3.0);
    labels[i] = rng.uniform(-3.0, 3.0);
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<double> preds_p(n), labels_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds_p[i] = preds[perm[i]];
    labels_p[i] = labels[perm[i]];
  }
  CHECK(binary_acc_f1(preds, labels, BaConvention::A).f1 ==
        binary_acc_f1(preds_p, labels_p, BaConvention::A).f1);
  CHECK(mae(preds, labels) == doctest::Approx(mae(preds_p, labels_p)).epsilon(1e-12));
  CHECK(pearson_corr(preds, labels) ==
        doctest::Approx(pearson_corr(preds_p, labels_p)).epsilon(1e-12));
}

TEST_CASE("multilabel report") {
  {
    // perfect logits
    std::vector<std::array<double, 8>> logits;
    std::vector<std::array<int, 4>> labels;
    Rng rng(8);
    for (int i = 0; i < 25; ++i) {
      std::array<int, 4> bits{};
      std::array<double, 8> row{};
      for (std::size_t e = 0; e < 4; ++e) {
        bits[e] = rng.uniform() < 0.5;
        row[2 * e + bits[e]] = 3.0;
      }
      labels.push_back(bits);
      logits.push_back(row);
    }
    MultilabelReport rep = multilabel_report(logits, labels);
    for (const BinaryScore& s : rep.per_emotion) {
      CHECK(s.accuracy == 1.0);
      CHECK(s.f1 == 1.0);
    }
    CHECK(rep.avg_accuracy == 1.0);
    CHECK(rep.avg_f1 == 1.0);
  }
  {
    // 20 fixed cases against an independent confusion-matrix oracle
    Rng rng(9);
    std::vector<std::array<double, 8>> logits;
    std::vector<std::array<int, 4>> labels;
    for (int i = 0; i < 20; ++i) {
      std::array<double, 8> row;
      for (double& v : row) v = rng.uniform(-1.0, 1.0);
      std::array<int, 4> bits;
      for (int& b : bits) b = rng.uniform() < 0.5;
      logits.push_back(row);
      labels.push_back(bits);
    }
    MultilabelReport rep = multilabel_report(logits, labels);
    double acc_sum = 0.0, f1_sum = 0.0;
    for (std::size_t e = 0; e < 4; ++e) {
      // independent per-emotion tally
      double tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        const bool pred = logits[i][2 * e + 1] > logits[i][2 * e];
        const bool truth = labels[i][e] == 1;
        if (pred && truth) tp += 1;
        if (pred && !truth) fp += 1;
        if (!pred && truth) fn += 1;
        if (!pred && !truth) tn += 1;
      }
      const double acc = (tp + tn) / 20.0;
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      CHECK(rep.per_emotion[e].accuracy == acc);
      CHECK(rep.per_emotion[e].f1 == doctest::Approx(f1).epsilon(1e-15));
      acc_sum += acc;
      f1_sum += f1;
    }
    CHECK(std::abs(rep.avg_accuracy - acc_sum / 4.0) <= 1e-12);
    CHECK(std::abs(rep.avg_f1 - f1_sum / 4.0) <= 1e-12);
  }
}

TEST_SUITE_END();
