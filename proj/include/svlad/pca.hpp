#pragma once

#include <cmath>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

// Top-2 principal components by power iteration with deflation. Deterministic
// (fixed start vector); adequate for 2-D projection dumps.
struct Pca2 {
  Tensor components;  // [2 x d]
  Tensor projected;   // [n x 2]
};

inline Pca2 pca_top2(const Tensor& rows) {
  require_rank2(rows, "pca input");
  const std::size_t n = rows.rows(), d = rows.cols();
  if (n < 2 || d < 2) throw DataError("pca needs at least 2 samples and 2 dimensions");

  Tensor centered = rows;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += rows.at(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centered.at(i, j) -= mean;
  }
  Tensor cov({d, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double va = centered.at(i, a);
      if (va == 0.0) continue;
      for (std::size_t b = 0; b < d; ++b) cov.at(a, b) += va * centered.at(i, b);
    }
  for (std::size_t k = 0; k < cov.size(); ++k) cov[k] /= static_cast<double>(n);

  Pca2 out;
  out.components = Tensor({2, d});
  for (std::size_t comp = 0; comp < 2; ++comp) {
    std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
    for (int iter = 0; iter < 200; ++iter) {
      std::vector<double> next(d, 0.0);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) next[a] += cov.at(a, b) * v[b];
      // deflate against the first component
      if (comp == 1) {
        double dot = 0.0;
        for (std::size_t a = 0; a < d; ++a) dot += next[a] * out.components.at(0, a);
        for (std::size_t a = 0; a < d; ++a) next[a] -= dot * out.components.at(0, a);
      }
      double nrm = 0.0;
      for (double x : next) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm < 1e-300) break;  // degenerate covariance; keep the previous direction
      for (std::size_t a = 0; a < d; ++a) v[a] = next[a] / nrm;
    }
    if (comp == 1) {
      double dot = 0.0;
      for (std::size_t a = 0; a < d; ++a) dot += v[a] * out.components.at(0, a);
      for (std::size_t a = 0; a < d; ++a) v[a] -= dot * out.components.at(0, a);
      double nrm = 0.0;
      for (double x : v) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-300)
        for (std::size_t a = 0; a < d; ++a) v[a] /= nrm;
    }
    for (std::size_t a = 0; a < d; ++a) out.components.at(comp, a) = v[a];
  }

  out.projected = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t comp = 0; comp < 2; ++comp) {
      double dot = 0.0;
      for (std::size_t a = 0; a < d; ++a) dot += centered.at(i, a) * out.components.at(comp, a);
      out.projected.at(i, comp) = dot;
    }
  return out;
}

}  // namespace svlad
