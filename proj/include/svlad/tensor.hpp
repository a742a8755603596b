#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "svlad/errors.hpp"

namespace svlad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor of 64-bit floats. Rank and extents are dynamic;
// everything on the loss path is rank 1 or 2. A default-constructed Tensor
// is the "absent" sentinel (used for unallocated gradients).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    for (std::size_t e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
    data_.assign(shape_size(shape_), fill);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor from(Shape shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    for (std::size_t e : t.shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(t.shape_));
    if (shape_size(t.shape_) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) + " does not fill shape " +
                       shape_str(t.shape_));
    t.data_ = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor vec(std::vector<double> values) {
    const std::size_t n = values.size();
    return from({n}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    if (r == 0) throw ShapeError("matrix literal needs at least one row");
    const std::size_t c = rows.begin()->size();
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(v));
  }

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    require_rank2("rows()");
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank2("cols()");
    return shape_[1];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i) {
    if (i >= data_.size()) throw ShapeError("flat index out of range");
    return data_[i];
  }
  double at(std::size_t i) const { return const_cast<Tensor*>(this)->at(i); }

  double& at(std::size_t r, std::size_t c) {
    require_rank2("at(r,c)");
    if (r >= shape_[0] || c >= shape_[1])
      throw ShapeError("index (" + std::to_string(r) + "," + std::to_string(c) +
                       ") out of range for " + shape_str(shape_));
    return data_[r * shape_[1] + c];
  }
  double at(std::size_t r, std::size_t c) const { return const_cast<Tensor*>(this)->at(r, c); }

  // Unchecked row pointer for kernels.
  double* row(std::size_t r) { return data_.data() + r * shape_[1]; }
  const double* row(std::size_t r) const { return data_.data() + r * shape_[1]; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void require_rank2(const char* what) const {
    if (shape_.size() != 2) throw ShapeError(std::string(what) + " requires rank 2, have " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_rank2(const Tensor& t, const char* ctx) {
  if (t.rank() != 2)
    throw ShapeError(std::string(ctx) + " requires rank 2, have " + shape_str(t.shape()));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* ctx) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(ctx) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
}

inline bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace detail {

// c[n x q] += a[n x p] * b[p x q]
inline void matmul_nn_acc(const double* a, const double* b, double* c, std::size_t n,
                          std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * p;
    double* crow = c + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b + k * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[n x p] += a[n x q] * b[p x q]^T
inline void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t n,
                          std::size_t q, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * q;
    double* crow = c + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      const double* brow = b + j * q;
      double acc = 0.0;
      for (std::size_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

// c[p x q] += a[n x p]^T * b[n x q]
inline void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t n,
                          std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * p;
    const double* brow = b + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      double* crow = c + k * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += aik * brow[j];
    }
  }
}

}  // namespace detail
}  // namespace svlad
