#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "svlad/errors.hpp"
#include "svlad/tensor.hpp"

namespace svlad {

// Handle into a Graph. Valid only for the graph that produced it.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

// A single-use computation tape. Each op records its output value and a
// backward closure with the op's analytic vector-Jacobian product; calling
// backward() once walks the tape in reverse creation order (which is a
// topological order by construction). Every op checks that its output is
// finite before it is admitted to the tape.
//
// Gradients only flow into subgraphs that contain a grad-requiring leaf;
// constant regions (masks, dataset features, frozen cluster centers) cost
// nothing on the way back.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  // ---- leaves -------------------------------------------------------------

  Var input(Tensor value, bool requires_grad = false) {
    return emit("input", std::move(value), {}, nullptr, requires_grad);
  }

  Var constant(Tensor value) { return input(std::move(value), false); }

  // Grad-requiring leaf registered under a unique name (model parameters).
  Var param(const std::string& name, const Tensor& value) {
    if (named_.count(name)) throw InternalError("parameter bound twice in one graph: " + name);
    Var v = input(value, true);
    named_.emplace(name, v.id);
    return v;
  }

  // ---- access -------------------------------------------------------------

  const Tensor& value(Var v) const { return node(v).value; }

  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  const Tensor& grad(Var v) const {
    const NodeRec& n = node(v);
    if (n.grad.empty()) throw InternalError("gradient was never propagated to this node");
    return n.grad;
  }

  // Gradient of every named parameter leaf touched by backward(); parameters
  // that received no gradient report zeros of the right shape.
  std::map<std::string, Tensor> named_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : named_) {
      const NodeRec& n = nodes_[id];
      out.emplace(name, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
    }
    return out;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // ---- backward -----------------------------------------------------------

  void backward(Var root, double seed = 1.0) {
    const NodeRec& r = node(root);
    if (r.value.size() != 1)
      throw ShapeError("backward(root, scalar-seed) requires a scalar root, have " +
                       shape_str(r.value.shape()));
    Tensor s(r.value.shape());
    s[0] = seed;
    backward(root, s);
  }

  void backward(Var root, const Tensor& seed) {
    if (!recording_) throw InternalError("backward() on a non-recording graph");
    NodeRec& r = node_mut(root);
    check_same_shape(r.value, seed, "backward seed");
    acc(root, seed);
    for (std::uint32_t id = root.id + 1; id-- > 0;) {
      NodeRec& n = nodes_[id];
      if (n.needs_grad && n.back && !n.grad.empty()) n.back(*this, n);
    }
  }

  // ---- elementwise / linear algebra ----------------------------------------

  Var add(Var a, Var b) {
    const Tensor &x = value(a), &y = value(b);
    check_same_shape(x, y, "add");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return emit("add", std::move(out), {a, b}, [a, b](Graph& g, const NodeRec& n) {
      if (g.needs(a)) g.acc(a, n.grad);
      if (g.needs(b)) g.acc(b, n.grad);
    });
  }

  Var sub(Var a, Var b) {
    const Tensor &x = value(a), &y = value(b);
    check_same_shape(x, y, "sub");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return emit("sub", std::move(out), {a, b}, [a, b](Graph& g, const NodeRec& n) {
      if (g.needs(a)) g.acc(a, n.grad);
      if (g.needs(b)) {
        Tensor& gb = g.grad_buf(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= n.grad[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor &x = value(a), &y = value(b);
    check_same_shape(x, y, "mul");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return emit("mul", std::move(out), {a, b}, [a, b](Graph& g, const NodeRec& n) {
      const Tensor &x = g.value(a), &y = g.value(b);
      if (g.needs(a)) {
        Tensor& ga = g.grad_buf(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * y[i];
      }
      if (g.needs(b)) {
        Tensor& gb = g.grad_buf(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += n.grad[i] * x[i];
      }
    });
  }

  Var scale(Var a, double c) {
    const Tensor& x = value(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
    return emit("scale", std::move(out), {a}, [a, c](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * n.grad[i];
    });
  }

  Var add_const(Var a, Tensor t) {
    const Tensor& x = value(a);
    check_same_shape(x, t, "add_const");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + t[i];
    return emit("add_const", std::move(out), {a}, [a](Graph& g, const NodeRec& n) {
      if (g.needs(a)) g.acc(a, n.grad);
    });
  }

  Var mul_const(Var a, Tensor t) {
    const Tensor& x = value(a);
    check_same_shape(x, t, "mul_const");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * t[i];
    return emit("mul_const", std::move(out), {a}, [a, t = std::move(t)](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i] * t[i];
    });
  }

  Var matmul(Var a, Var b) {
    const Tensor &x = value(a), &y = value(b);
    require_rank2(x, "matmul lhs");
    require_rank2(y, "matmul rhs");
    if (x.cols() != y.rows())
      throw ShapeError("matmul: inner dimensions disagree, " + shape_str(x.shape()) + " * " +
                       shape_str(y.shape()));
    Tensor out({x.rows(), y.cols()});
    detail::matmul_nn_acc(x.data(), y.data(), out.data(), x.rows(), x.cols(), y.cols());
    return emit("matmul", std::move(out), {a, b}, [a, b](Graph& g, const NodeRec& n) {
      const Tensor &x = g.value(a), &y = g.value(b);
      if (g.needs(a))
        detail::matmul_nt_acc(n.grad.data(), y.data(), g.grad_buf(a).data(), x.rows(), y.cols(),
                              x.cols());
      if (g.needs(b))
        detail::matmul_tn_acc(x.data(), n.grad.data(), g.grad_buf(b).data(), x.rows(), x.cols(),
                              y.cols());
    });
  }

  // out[i][j] = sum_k x[i][k] W[k][j] + b[j]
  Var linear(Var xv, Var wv, Var bv) {
    const Tensor &x = value(xv), &w = value(wv), &b = value(bv);
    require_rank2(x, "linear input");
    require_rank2(w, "linear weight");
    if (b.rank() != 1) throw ShapeError("linear bias must be rank 1, have " + shape_str(b.shape()));
    if (x.cols() != w.rows() || w.cols() != b.extent(0))
      throw ShapeError("linear: x" + shape_str(x.shape()) + " W" + shape_str(w.shape()) + " b" +
                       shape_str(b.shape()) + " do not chain");
    Tensor out({x.rows(), w.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double* orow = out.row(i);
      for (std::size_t j = 0; j < w.cols(); ++j) orow[j] = b[j];
    }
    detail::matmul_nn_acc(x.data(), w.data(), out.data(), x.rows(), x.cols(), w.cols());
    return emit("linear", std::move(out), {xv, wv, bv}, [xv, wv, bv](Graph& g, const NodeRec& n) {
      const Tensor &x = g.value(xv), &w = g.value(wv);
      if (g.needs(xv))
        detail::matmul_nt_acc(n.grad.data(), w.data(), g.grad_buf(xv).data(), x.rows(), w.cols(),
                              x.cols());
      if (g.needs(wv))
        detail::matmul_tn_acc(x.data(), n.grad.data(), g.grad_buf(wv).data(), x.rows(), x.cols(),
                              w.cols());
      if (g.needs(bv)) {
        Tensor& gb = g.grad_buf(bv);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const double* grow = n.grad.row(i);
          for (std::size_t j = 0; j < gb.size(); ++j) gb[j] += grow[j];
        }
      }
    });
  }

  Var transpose(Var a) {
    const Tensor& x = value(a);
    require_rank2(x, "transpose");
    Tensor out({x.cols(), x.rows()});
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out.row(j)[i] = x.row(i)[j];
    return emit("transpose", std::move(out), {a}, [a](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga.row(i)[j] += n.grad.row(j)[i];
    });
  }

  Var reshape(Var a, Shape shape) {
    const Tensor& x = value(a);
    if (shape_size(shape) != x.size())
      throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                       " changes element count");
    Tensor re = Tensor::from(std::move(shape), std::vector<double>(x.data(), x.data() + x.size()));
    return emit("reshape", std::move(re), {a}, [a](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[i];
    });
  }

  // ---- nonlinearities -------------------------------------------------------

  // Softmax along the last axis, max-subtracted.
  Var softmax_rows(Var a) {
    const Tensor& x = value(a);
    if (x.rank() < 1) throw ShapeError("softmax needs rank >= 1");
    const std::size_t width = x.shape().back();
    const std::size_t rows = x.size() / width;
    Tensor out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * width;
      double* or_ = out.data() + r * width;
      double m = xr[0];
      for (std::size_t j = 1; j < width; ++j) m = std::max(m, xr[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        or_[j] = std::exp(xr[j] - m);
        z += or_[j];
      }
      for (std::size_t j = 0; j < width; ++j) or_[j] /= z;
    }
    return emit("softmax", std::move(out), {a}, [a, width, rows](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = n.value.data() + r * width;
        const double* gy = n.grad.data() + r * width;
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += gy[j] * p[j];
        double* gx = ga.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) gx[j] += p[j] * (gy[j] - dot);
      }
    });
  }

  // Exact-erf GELU: x * Phi(x).
  Var gelu(Var a) {
    static constexpr double kInvSqrt2 = 0.7071067811865476;
    const Tensor& x = value(a);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
    return emit("gelu", std::move(out), {a}, [a](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      static constexpr double kInvSqrt2Pi = 0.3989422804014327;
      const Tensor& x = g.value(a);
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        ga[i] += n.grad[i] * (cdf + x[i] * pdf);
      }
    });
  }

  // Per-row standardize with population variance, then affine.
  Var layer_norm_rows(Var av, Var gammav, Var betav, double eps) {
    const Tensor &x = value(av), &gamma = value(gammav), &beta = value(betav);
    require_rank2(x, "layer_norm input");
    const std::size_t d = x.cols();
    if (gamma.rank() != 1 || gamma.extent(0) != d || beta.rank() != 1 || beta.extent(0) != d)
      throw ShapeError("layer_norm: gamma/beta must be rank-1 of width " + std::to_string(d));
    const std::size_t rows = x.rows();
    Tensor out(x.shape());
    std::vector<double> mean(rows), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.row(r);
      double m = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += xr[j];
      m /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
      var /= static_cast<double>(d);
      const double rs = 1.0 / std::sqrt(var + eps);
      mean[r] = m;
      rstd[r] = rs;
      double* or_ = out.row(r);
      for (std::size_t j = 0; j < d; ++j) or_[j] = gamma[j] * ((xr[j] - m) * rs) + beta[j];
    }
    return emit("layer_norm", std::move(out), {av, gammav, betav},
                [av, gammav, betav, mean = std::move(mean), rstd = std::move(rstd), d,
                 rows](Graph& g, const NodeRec& n) {
                  const Tensor &x = g.value(av), &gamma = g.value(gammav);
                  const bool nx = g.needs(av), ng = g.needs(gammav), nb = g.needs(betav);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* xr = x.row(r);
                    const double* gy = n.grad.row(r);
                    const double m = mean[r], rs = rstd[r];
                    if (ng || nb) {
                      Tensor* gg = ng ? &g.grad_buf(gammav) : nullptr;
                      Tensor* gb = nb ? &g.grad_buf(betav) : nullptr;
                      for (std::size_t j = 0; j < d; ++j) {
                        if (gg) (*gg)[j] += gy[j] * ((xr[j] - m) * rs);
                        if (gb) (*gb)[j] += gy[j];
                      }
                    }
                    if (nx) {
                      // gx = rs * (gh - mean(gh) - xhat * mean(gh .* xhat)), gh = gy .* gamma
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = gy[j] * gamma[j];
                        const double xh = (xr[j] - m) * rs;
                        s1 += gh;
                        s2 += gh * xh;
                      }
                      s1 /= static_cast<double>(d);
                      s2 /= static_cast<double>(d);
                      double* gx = g.grad_buf(av).row(r);
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = gy[j] * gamma[j];
                        const double xh = (xr[j] - m) * rs;
                        gx[j] += rs * (gh - s1 - xh * s2);
                      }
                    }
                  }
                });
  }

  // Per-row x / max(||x||_2, eps).
  Var l2_normalize_rows(Var a, double eps = 1e-12) {
    const Tensor& x = value(a);
    require_rank2(x, "l2_normalize input");
    const std::size_t rows = x.rows(), d = x.cols();
    Tensor out(x.shape());
    std::vector<double> norms(rows);
    std::vector<char> guarded(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.row(r);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += xr[j] * xr[j];
      const double nrm = std::sqrt(s);
      guarded[r] = nrm < eps;
      const double denom = guarded[r] ? eps : nrm;
      norms[r] = denom;
      double* or_ = out.row(r);
      for (std::size_t j = 0; j < d; ++j) or_[j] = xr[j] / denom;
    }
    return emit("l2_normalize", std::move(out), {a},
                [a, norms = std::move(norms), guarded = std::move(guarded), rows, d](
                    Graph& g, const NodeRec& n) {
                  if (!g.needs(a)) return;
                  const Tensor& x = g.value(a);
                  Tensor& ga = g.grad_buf(a);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* xr = x.row(r);
                    const double* gy = n.grad.row(r);
                    double* gx = ga.row(r);
                    const double s = norms[r];
                    if (guarded[r]) {  // constant 1/eps scaling below the guard
                      for (std::size_t j = 0; j < d; ++j) gx[j] += gy[j] / s;
                    } else {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < d; ++j) dot += gy[j] * xr[j];
                      const double s3 = s * s * s;
                      for (std::size_t j = 0; j < d; ++j) gx[j] += gy[j] / s - xr[j] * dot / s3;
                    }
                  }
                });
  }

  // ---- structure ops --------------------------------------------------------

  Var row_slice(Var a, std::size_t r0, std::size_t r1) {
    const Tensor& x = value(a);
    require_rank2(x, "row_slice");
    if (r0 >= r1 || r1 > x.rows()) throw ShapeError("row_slice range invalid");
    Tensor out({r1 - r0, x.cols()});
    std::copy(x.row(r0), x.row(r0) + (r1 - r0) * x.cols(), out.data());
    return emit("row_slice", std::move(out), {a}, [a, r0](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      const std::size_t c = ga.cols();
      for (std::size_t i = 0; i < n.grad.rows(); ++i) {
        double* gr = ga.row(r0 + i);
        const double* gy = n.grad.row(i);
        for (std::size_t j = 0; j < c; ++j) gr[j] += gy[j];
      }
    });
  }

  Var col_slice(Var a, std::size_t c0, std::size_t c1) {
    const Tensor& x = value(a);
    require_rank2(x, "col_slice");
    if (c0 >= c1 || c1 > x.cols()) throw ShapeError("col_slice range invalid");
    Tensor out({x.rows(), c1 - c0});
    for (std::size_t i = 0; i < x.rows(); ++i)
      std::copy(x.row(i) + c0, x.row(i) + c1, out.row(i));
    return emit("col_slice", std::move(out), {a}, [a, c0](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < n.grad.rows(); ++i) {
        double* gr = ga.row(i) + c0;
        const double* gy = n.grad.row(i);
        for (std::size_t j = 0; j < n.grad.cols(); ++j) gr[j] += gy[j];
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    std::size_t rows = 0;
    const std::size_t cols = value(parts[0]).cols();
    for (Var p : parts) {
      const Tensor& t = value(p);
      require_rank2(t, "concat_rows part");
      if (t.cols() != cols) throw ShapeError("concat_rows: column widths differ");
      rows += t.rows();
    }
    Tensor out({rows, cols});
    std::size_t r = 0;
    for (Var p : parts) {
      const Tensor& t = value(p);
      std::copy(t.data(), t.data() + t.size(), out.row(r));
      r += t.rows();
    }
    return emit("concat_rows", std::move(out), parts, [parts, cols](Graph& g, const NodeRec& n) {
      std::size_t r = 0;
      for (Var p : parts) {
        const std::size_t pr = g.value(p).rows();
        if (g.needs(p)) {
          Tensor& gp = g.grad_buf(p);
          const double* gy = n.grad.row(r);
          for (std::size_t i = 0; i < pr * cols; ++i) gp[i] += gy[i];
        }
        r += pr;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      const Tensor& t = value(p);
      require_rank2(t, "concat_cols part");
      if (t.rows() != rows) throw ShapeError("concat_cols: row counts differ");
      cols += t.cols();
    }
    Tensor out({rows, cols});
    std::size_t c = 0;
    for (Var p : parts) {
      const Tensor& t = value(p);
      for (std::size_t i = 0; i < rows; ++i)
        std::copy(t.row(i), t.row(i) + t.cols(), out.row(i) + c);
      c += t.cols();
    }
    return emit("concat_cols", std::move(out), parts, [parts, rows](Graph& g, const NodeRec& n) {
      std::size_t c = 0;
      for (Var p : parts) {
        const std::size_t pc = g.value(p).cols();
        if (g.needs(p)) {
          Tensor& gp = g.grad_buf(p);
          for (std::size_t i = 0; i < rows; ++i) {
            const double* gy = n.grad.row(i) + c;
            double* gr = gp.row(i);
            for (std::size_t j = 0; j < pc; ++j) gr[j] += gy[j];
          }
        }
        c += pc;
      }
    });
  }

  // Rows of a table by index; repeated ids accumulate on the way back.
  Var gather_rows(Var table, std::vector<std::size_t> ids) {
    const Tensor& t = value(table);
    require_rank2(t, "gather_rows table");
    if (ids.empty()) throw ShapeError("gather_rows with no indices");
    for (std::size_t id : ids)
      if (id >= t.rows()) throw ShapeError("gather_rows index out of range");
    Tensor out({ids.size(), t.cols()});
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy(t.row(ids[i]), t.row(ids[i]) + t.cols(), out.row(i));
    return emit("gather_rows", std::move(out), {table},
                [table, ids = std::move(ids)](Graph& g, const NodeRec& n) {
                  if (!g.needs(table)) return;
                  Tensor& gt = g.grad_buf(table);
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    double* gr = gt.row(ids[i]);
                    const double* gy = n.grad.row(i);
                    for (std::size_t j = 0; j < gt.cols(); ++j) gr[j] += gy[j];
                  }
                });
  }

  // Window means over precomputed member lists (see build_pool_windows).
  Var mean_pool_windows(Var a, const std::vector<std::vector<std::size_t>>& windows) {
    const Tensor& x = value(a);
    require_rank2(x, "mean_pool_windows");
    if (windows.empty()) throw EmptySequenceError("mean pooling over zero windows");
    Tensor out({windows.size(), x.cols()});
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (windows[w].empty()) throw InternalError("empty pooling window");
      double* or_ = out.row(w);
      for (std::size_t m : windows[w]) {
        const double* xr = x.row(m);
        for (std::size_t j = 0; j < x.cols(); ++j) or_[j] += xr[j];
      }
      const double inv = 1.0 / static_cast<double>(windows[w].size());
      for (std::size_t j = 0; j < x.cols(); ++j) or_[j] *= inv;
    }
    return emit("mean_pool_windows", std::move(out), {a},
                [a, windows](Graph& g, const NodeRec& n) {
                  if (!g.needs(a)) return;
                  Tensor& ga = g.grad_buf(a);
                  for (std::size_t w = 0; w < windows.size(); ++w) {
                    const double inv = 1.0 / static_cast<double>(windows[w].size());
                    const double* gy = n.grad.row(w);
                    for (std::size_t m : windows[w]) {
                      double* gr = ga.row(m);
                      for (std::size_t j = 0; j < ga.cols(); ++j) gr[j] += gy[j] * inv;
                    }
                  }
                });
  }

  // Mean of the mask-valid rows -> [1 x d].
  Var masked_mean_rows(Var a, const std::vector<bool>& mask) {
    const Tensor& x = value(a);
    require_rank2(x, "masked_mean_rows");
    if (mask.size() != x.rows()) throw ShapeError("mask length does not match row count");
    std::size_t nv = 0;
    for (bool b : mask) nv += b;
    if (nv == 0) throw EmptySequenceError("masked mean over zero valid rows");
    Tensor out({1, x.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (!mask[i]) continue;
      const double* xr = x.row(i);
      for (std::size_t j = 0; j < x.cols(); ++j) out[j] += xr[j];
    }
    const double inv = 1.0 / static_cast<double>(nv);
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] *= inv;
    return emit("masked_mean_rows", std::move(out), {a},
                [a, mask, inv](Graph& g, const NodeRec& n) {
                  if (!g.needs(a)) return;
                  Tensor& ga = g.grad_buf(a);
                  for (std::size_t i = 0; i < ga.rows(); ++i) {
                    if (!mask[i]) continue;
                    double* gr = ga.row(i);
                    for (std::size_t j = 0; j < ga.cols(); ++j) gr[j] += n.grad[j] * inv;
                  }
                });
  }

  // Per-dimension max over rows -> [1 x d]; gradient routes to the argmax
  // row, ties to the lowest row index.
  Var max_over_rows(Var a) {
    const Tensor& x = value(a);
    require_rank2(x, "max_over_rows");
    const std::size_t rows = x.rows(), d = x.cols();
    Tensor out({1, d});
    std::vector<std::size_t> arg(d, 0);
    for (std::size_t j = 0; j < d; ++j) out[j] = x.row(0)[j];
    for (std::size_t i = 1; i < rows; ++i) {
      const double* xr = x.row(i);
      for (std::size_t j = 0; j < d; ++j)
        if (xr[j] > out[j]) {
          out[j] = xr[j];
          arg[j] = i;
        }
    }
    return emit("max_over_rows", std::move(out), {a},
                [a, arg = std::move(arg)](Graph& g, const NodeRec& n) {
                  if (!g.needs(a)) return;
                  Tensor& ga = g.grad_buf(a);
                  for (std::size_t j = 0; j < ga.cols(); ++j) ga.row(arg[j])[j] += n.grad[j];
                });
  }

  // Column sums of [n x k] -> rank-1 [k].
  Var col_sums(Var a) {
    const Tensor& x = value(a);
    require_rank2(x, "col_sums");
    Tensor out({x.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* xr = x.row(i);
      for (std::size_t j = 0; j < x.cols(); ++j) out[j] += xr[j];
    }
    return emit("col_sums", std::move(out), {a}, [a](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < ga.rows(); ++i) {
        double* gr = ga.row(i);
        for (std::size_t j = 0; j < ga.cols(); ++j) gr[j] += n.grad[j];
      }
    });
  }

  // Row j of x scaled by s[j]; s is rank-1 of length rows(x).
  Var scale_rows(Var a, Var sv) {
    const Tensor &x = value(a), &s = value(sv);
    require_rank2(x, "scale_rows");
    if (s.rank() != 1 || s.extent(0) != x.rows())
      throw ShapeError("scale_rows: scale vector must be rank-1 of length rows");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double* xr = x.row(i);
      double* or_ = out.row(i);
      for (std::size_t j = 0; j < x.cols(); ++j) or_[j] = s[i] * xr[j];
    }
    return emit("scale_rows", std::move(out), {a, sv}, [a, sv](Graph& g, const NodeRec& n) {
      const Tensor &x = g.value(a), &s = g.value(sv);
      if (g.needs(a)) {
        Tensor& ga = g.grad_buf(a);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const double* gy = n.grad.row(i);
          double* gr = ga.row(i);
          for (std::size_t j = 0; j < x.cols(); ++j) gr[j] += s[i] * gy[j];
        }
      }
      if (g.needs(sv)) {
        Tensor& gs = g.grad_buf(sv);
        for (std::size_t i = 0; i < x.rows(); ++i) {
          const double* gy = n.grad.row(i);
          const double* xr = x.row(i);
          double acc = 0.0;
          for (std::size_t j = 0; j < x.cols(); ++j) acc += gy[j] * xr[j];
          gs[i] += acc;
        }
      }
    });
  }

  Var sum_all(Var a) {
    const Tensor& x = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    return emit("sum_all", Tensor::scalar(s), {a}, [a](Graph& g, const NodeRec& n) {
      if (!g.needs(a)) return;
      Tensor& ga = g.grad_buf(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.grad[0];
    });
  }

  // ---- losses ---------------------------------------------------------------

  // Sum over rows of (logsumexp(row) - row[target]); stable.
  Var cross_entropy_rows(Var logitsv, std::vector<std::size_t> targets) {
    const Tensor& x = value(logitsv);
    require_rank2(x, "cross_entropy logits");
    if (targets.size() != x.rows()) throw ShapeError("one target per logit row required");
    for (std::size_t t : targets)
      if (t >= x.cols()) throw ShapeError("cross_entropy target out of range");
    double total = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double* xr = x.row(r);
      double m = xr[0];
      for (std::size_t j = 1; j < x.cols(); ++j) m = std::max(m, xr[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(xr[j] - m);
      total += m + std::log(z) - xr[targets[r]];
    }
    return emit("cross_entropy", Tensor::scalar(total), {logitsv},
                [logitsv, targets = std::move(targets)](Graph& g, const NodeRec& n) {
                  if (!g.needs(logitsv)) return;
                  const Tensor& x = g.value(logitsv);
                  Tensor& gx = g.grad_buf(logitsv);
                  const double gs = n.grad[0];
                  for (std::size_t r = 0; r < x.rows(); ++r) {
                    const double* xr = x.row(r);
                    double m = xr[0];
                    for (std::size_t j = 1; j < x.cols(); ++j) m = std::max(m, xr[j]);
                    double z = 0.0;
                    for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(xr[j] - m);
                    double* gr = gx.row(r);
                    for (std::size_t j = 0; j < x.cols(); ++j) {
                      const double p = std::exp(xr[j] - m) / z;
                      gr[j] += gs * (p - (j == targets[r] ? 1.0 : 0.0));
                    }
                  }
                });
  }

  // (pred - target)^2 for a single-element pred.
  Var squared_error(Var predv, double target) {
    const Tensor& p = value(predv);
    if (p.size() != 1) throw ShapeError("squared_error expects a single-element prediction");
    const double diff = p[0] - target;
    return emit("squared_error", Tensor::scalar(diff * diff), {predv},
                [predv, target](Graph& g, const NodeRec& n) {
                  if (!g.needs(predv)) return;
                  g.grad_buf(predv)[0] += n.grad[0] * 2.0 * (g.value(predv)[0] - target);
                });
  }

 private:
  struct NodeRec {
    Tensor value;
    Tensor grad;
    std::function<void(Graph&, const NodeRec&)> back;
    bool needs_grad = false;
  };

  const NodeRec& node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw InternalError("invalid graph handle");
    return nodes_[v.id];
  }
  NodeRec& node_mut(Var v) { return const_cast<NodeRec&>(node(v)); }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  Tensor& grad_buf(Var v) {
    NodeRec& n = node_mut(v);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void acc(Var v, const Tensor& delta) {
    Tensor& g = grad_buf(v);
    check_same_shape(g, delta, "gradient accumulate");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
  }

  template <class Back>
  Var emit(const char* op, Tensor value, const std::vector<Var>& parents, Back&& back,
           bool leaf_requires = false) {
    if (!all_finite(value))
      throw NonFiniteError(std::string("non-finite value produced by op '") + op + "'");
    NodeRec n;
    n.value = std::move(value);
    n.needs_grad = leaf_requires;
    for (Var p : parents) n.needs_grad = n.needs_grad || node(p).needs_grad;
    if constexpr (!std::is_same_v<std::decay_t<Back>, std::nullptr_t>) {
      if (recording_ && n.needs_grad) n.back = std::forward<Back>(back);
    }
    nodes_.push_back(std::move(n));
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    return Var{id};
  }

  bool recording_ = true;
  std::deque<NodeRec> nodes_;  // deque: node references stay valid as the tape grows
  std::map<std::string, std::uint32_t> named_;
};

}  // namespace svlad
