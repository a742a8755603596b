#pragma once

#include <cstddef>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/graph.hpp"

namespace svlad {

// Partition of the mask-valid rows into consecutive windows of size m with
// stride m; a final partial window keeps its remainder rows. Window members
// are indices into the original (unmasked) sequence.
inline std::vector<std::vector<std::size_t>> build_pool_windows(const std::vector<bool>& mask,
                                                                std::size_t m) {
  if (m == 0) throw ConfigError("pooling window size must be >= 1");
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) valid.push_back(i);
  if (valid.empty()) throw EmptySequenceError("mean pooling over a fully masked sequence");
  std::vector<std::vector<std::size_t>> windows;
  for (std::size_t start = 0; start < valid.size(); start += m) {
    const std::size_t end = std::min(start + m, valid.size());
    windows.emplace_back(valid.begin() + static_cast<std::ptrdiff_t>(start),
                         valid.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return windows;
}

struct PooledSeq {
  Var values;              // [ceil(n_valid/m) x d]
  std::vector<bool> mask;  // all-true after compaction
};

inline PooledSeq mean_pool_windows(Graph& g, Var x, const std::vector<bool>& mask, std::size_t m) {
  const auto windows = build_pool_windows(mask, m);
  PooledSeq out;
  out.values = g.mean_pool_windows(x, windows);
  out.mask.assign(windows.size(), true);
  return out;
}

}  // namespace svlad
