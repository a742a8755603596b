#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/graph.hpp"
#include "svlad/random.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

struct KMeansResult {
  Tensor centers;                   // [C x d]
  std::vector<std::size_t> labels;  // one per point
  std::vector<double> distortions;  // recorded after every Lloyd iteration
  std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Ties break toward the lowest
// center index; an empty cluster is re-seeded with the point farthest from
// its assigned center. Iterates to an assignment fixpoint or max_iters.
// Distortion must never increase from one iteration to the next.
inline KMeansResult kmeans(const Tensor& points, std::size_t C, std::size_t max_iters,
                           std::uint64_t seed) {
  require_rank2(points, "kmeans points");
  const std::size_t N = points.rows(), d = points.cols();
  if (C == 0) throw ConfigError("cluster count must be positive");
  if (N < C)
    throw ConfigError("kmeans needs at least as many points (" + std::to_string(N) +
                      ") as clusters (" + std::to_string(C) + ")");
  if (max_iters == 0) throw ConfigError("kmeans needs at least one iteration");

  Rng rng(seed);
  Tensor centers({C, d});

  // k-means++: first center uniform, then D^2-weighted draws
  {
    const std::size_t first = rng.index(N);
    std::copy(points.row(first), points.row(first) + d, centers.row(0));
    std::vector<double> d2(N);
    for (std::size_t k = 1; k < C; ++k) {
      double total = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
          best = std::min(best, detail::sq_dist(points.row(i), centers.row(c), d));
        d2[i] = best;
        total += best;
      }
      std::size_t pick = N - 1;
      if (total <= 0.0) {
        pick = rng.index(N);  // all points already covered; any choice is equivalent
      } else {
        const double r = rng.uniform() * total;
        double cum = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
          cum += d2[i];
          if (cum > r) {
            pick = i;
            break;
          }
        }
      }
      std::copy(points.row(pick), points.row(pick) + d, centers.row(k));
    }
  }

  KMeansResult out;
  out.labels.assign(N, 0);
  std::vector<std::size_t> prev_labels;
  std::vector<std::size_t> counts(C);

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // assignment, ties toward the lowest center index
    for (std::size_t i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const double dist = detail::sq_dist(points.row(i), centers.row(c), d);
        if (dist < best) {
          best = dist;
          arg = c;
        }
      }
      out.labels[i] = arg;
    }
    if (iter > 0 && out.labels == prev_labels) break;  // fixpoint
    prev_labels = out.labels;
    out.iterations = iter + 1;

    // means
    centers.fill(0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < N; ++i) {
      double* c = centers.row(out.labels[i]);
      const double* p = points.row(i);
      for (std::size_t j = 0; j < d; ++j) c[j] += p[j];
      ++counts[out.labels[i]];
    }
    for (std::size_t c = 0; c < C; ++c)
      if (counts[c] > 0) {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t j = 0; j < d; ++j) centers.row(c)[j] *= inv;
      }

    // re-seed empty clusters with the farthest point from its own center
    for (std::size_t c = 0; c < C; ++c) {
      if (counts[c] > 0) continue;
      double far = -1.0;
      std::size_t pick = 0;
      for (std::size_t i = 0; i < N; ++i) {
        if (counts[out.labels[i]] <= 1) continue;  // do not strand another cluster
        const double dist = detail::sq_dist(points.row(i), centers.row(out.labels[i]), d);
        if (dist > far) {
          far = dist;
          pick = i;
        }
      }
      --counts[out.labels[pick]];
      std::copy(points.row(pick), points.row(pick) + d, centers.row(c));
      out.labels[pick] = c;
      counts[c] = 1;
    }

    double distortion = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      distortion += detail::sq_dist(points.row(i), centers.row(out.labels[i]), d);
    if (!out.distortions.empty() &&
        distortion > out.distortions.back() + 1e-9 * std::max(1.0, out.distortions.back()))
      throw InternalError("Lloyd distortion increased across an iteration");
    out.distortions.push_back(distortion);
  }

  out.centers = std::move(centers);
  return out;
}

// One S3C clustering: momentum-averaged center matrix and the epoch's frozen
// pseudo-labels.
struct ClusterState {
  std::size_t C = 0;
  Tensor Z;  // [C x d_s], empty until the first refresh
  double alpha = 0.99;
  std::map<std::string, std::size_t> assignments;
  bool active = false;
};

// Greedy nearest-neighbor pairing between previous and fresh centers:
// repeatedly take the globally closest (prev, new) pair among the unmatched.
// Returns perm with perm[new_index] = prev_index.
inline std::vector<std::size_t> greedy_match_centers(const Tensor& prev, const Tensor& fresh) {
  check_same_shape(prev, fresh, "center matching");
  const std::size_t C = prev.rows(), d = prev.cols();
  std::vector<std::size_t> perm(C, 0);
  std::vector<bool> prev_used(C, false), fresh_used(C, false);
  for (std::size_t round = 0; round < C; ++round) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < C; ++i) {
      if (prev_used[i]) continue;
      for (std::size_t j = 0; j < C; ++j) {
        if (fresh_used[j]) continue;
        const double dist = detail::sq_dist(prev.row(i), fresh.row(j), d);
        if (dist < best) {
          best = dist;
          bi = i;
          bj = j;
        }
      }
    }
    prev_used[bi] = true;
    fresh_used[bj] = true;
    perm[bj] = bi;
  }
  return perm;
}

// Z <- alpha * Z_prev + (1 - alpha) * Z_new, elementwise.
inline void momentum_update(Tensor& z, const Tensor& z_new, double alpha) {
  check_same_shape(z, z_new, "momentum update");
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = alpha * z[i] + (1.0 - alpha) * z_new[i];
}

struct RefreshStats {
  double distortion = 0.0;
  double center_shift = 0.0;  // Frobenius norm of the Z change
  std::size_t kmeans_iterations = 0;
};

// Epoch-start refresh: fresh k-means over all training features (computed
// with frozen parameters by the caller), centers matched to the previous Z,
// EMA applied, pseudo-labels frozen for the epoch under the matched indexing.
inline RefreshStats refresh_state(ClusterState& st, const Tensor& features,
                                  const std::vector<std::string>& ids, std::size_t kmeans_iters,
                                  std::uint64_t kmeans_seed) {
  if (features.rows() != ids.size()) throw InternalError("one id per feature row required");
  if (features.rows() < st.C)
    throw ConfigError("cannot form " + std::to_string(st.C) + " clusters from " +
                      std::to_string(features.rows()) + " samples");
  KMeansResult km = kmeans(features, st.C, kmeans_iters, kmeans_seed);

  RefreshStats stats;
  stats.distortion = km.distortions.empty() ? 0.0 : km.distortions.back();
  stats.kmeans_iterations = km.iterations;

  st.assignments.clear();
  if (st.Z.empty()) {
    st.Z = km.centers;
    for (std::size_t i = 0; i < ids.size(); ++i) st.assignments[ids[i]] = km.labels[i];
  } else {
    const std::vector<std::size_t> perm = greedy_match_centers(st.Z, km.centers);
    Tensor matched(st.Z.shape());
    for (std::size_t j = 0; j < st.C; ++j)
      std::copy(km.centers.row(j), km.centers.row(j) + km.centers.cols(),
                matched.row(perm[j]));
    Tensor before = st.Z;
    momentum_update(st.Z, matched, st.alpha);
    double shift = 0.0;
    for (std::size_t i = 0; i < st.Z.size(); ++i) {
      const double diff = st.Z[i] - before[i];
      shift += diff * diff;
    }
    stats.center_shift = std::sqrt(shift);
    for (std::size_t i = 0; i < ids.size(); ++i) st.assignments[ids[i]] = perm[km.labels[i]];
  }
  st.active = true;
  return stats;
}

// -log softmax(Z r_hat)[assignment]. Z is a constant: the gradient reaches
// the fused feature only.
inline Var s3c_loss(Graph& g, Var fused, const ClusterState& st, const std::string& sample_id) {
  if (!st.active) throw InternalError("s3c_loss on an inactive cluster state");
  const auto it = st.assignments.find(sample_id);
  if (it == st.assignments.end())
    throw InternalError("sample " + sample_id + " has no cluster assignment");
  const Tensor& f = g.value(fused);
  if (f.rank() != 2 || f.rows() != 1 || f.cols() != st.Z.cols())
    throw ShapeError("s3c_loss expects a [1 x d_s] fused feature");
  Var logits = g.matmul(fused, g.transpose(g.constant(st.Z)));  // [1 x C]
  return g.cross_entropy_rows(logits, {it->second});
}

// Sum of the per-state losses; exactly zero while the states are inactive.
inline Var multi_s3c(Graph& g, Var fused, const std::vector<ClusterState>& states,
                     const std::string& sample_id) {
  std::size_t active = 0;
  for (const ClusterState& st : states) active += st.active;
  if (active != 0 && active != states.size())
    throw InternalError("cluster states out of phase: some active, some not");
  if (states.empty() || active == 0) return g.constant(Tensor::scalar(0.0));
  Var total = s3c_loss(g, fused, states[0], sample_id);
  for (std::size_t i = 1; i < states.size(); ++i)
    total = g.add(total, s3c_loss(g, fused, states[i], sample_id));
  return total;
}

}  // namespace svlad
