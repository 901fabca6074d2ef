// Copyright 2026 The mpsim Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpsim/error.hpp"

namespace mpsim::tp {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major fp64 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor of shape " + shape_str(shape_) + " given " + std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t d) const { return shape_.at(d); }
  std::size_t size() const { return data_.size(); }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Size of the last dimension and number of rows before it.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  Tensor reshaped(Shape s) const {
    if (count(s) != size()) throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  bool operator==(const Tensor&) const = default;

  static std::size_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline Tensor random_normal(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

namespace detail {
// outer = product of dims before d, inner = product after d
inline void strides(const Shape& s, std::size_t d, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < d; ++i) outer *= s[i];
  for (std::size_t i = d + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

inline std::size_t resolve_dim(const Tensor& t, int dim) {
  const int r = static_cast<int>(t.rank());
  const int d = dim < 0 ? dim + r : dim;
  if (d < 0 || d >= r) throw ShapeError("dimension " + std::to_string(dim) + " out of range for " + shape_str(t.shape()));
  return static_cast<std::size_t>(d);
}

inline Tensor slice(const Tensor& t, int dim, std::size_t begin, std::size_t end) {
  const auto d = resolve_dim(t, dim);
  if (begin > end || end > t.dim(d)) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") outside dim " +
                     std::to_string(d) + " of " + shape_str(t.shape()));
  }
  std::size_t outer, inner;
  detail::strides(t.shape(), d, outer, inner);
  Shape s = t.shape();
  s[d] = end - begin;
  Tensor out(s);
  const std::size_t n = t.dim(d);
  std::size_t k = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    const auto* src = t.data().data() + (o * n + begin) * inner;
    std::copy(src, src + (end - begin) * inner, out.data().begin() + static_cast<std::ptrdiff_t>(k));
    k += (end - begin) * inner;
  }
  return out;
}

/// Splits `dim` into `parts` equal blocks.
inline std::vector<Tensor> split(const Tensor& t, int dim, std::size_t parts) {
  const auto d = resolve_dim(t, dim);
  if (parts == 0 || t.dim(d) % parts != 0) {
    throw ShapeError("dimension " + std::to_string(d) + " of size " + std::to_string(t.dim(d)) +
                     " is not divisible by " + std::to_string(parts));
  }
  const std::size_t w = t.dim(d) / parts;
  std::vector<Tensor> out;
  for (std::size_t p = 0; p < parts; ++p) out.push_back(slice(t, static_cast<int>(d), p * w, (p + 1) * w));
  return out;
}

inline Tensor concat(std::span<const Tensor> parts, int dim) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const auto d = resolve_dim(parts.front(), dim);
  Shape s = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != s.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != d && p.dim(i) != s[i]) {
        throw ShapeError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(s));
      }
    }
    total += p.dim(d);
  }
  s[d] = total;
  Tensor out(s);
  std::size_t outer, inner;
  detail::strides(s, d, outer, inner);
  auto it = out.data().begin();
  for (std::size_t o = 0; o < outer; ++o) {
    for (const auto& p : parts) {
      const std::size_t n = p.dim(d) * inner;
      const auto* src = p.data().data() + o * n;
      it = std::copy(src, src + n, it);
    }
  }
  return out;
}

inline Tensor concat(std::initializer_list<Tensor> parts, int dim) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), dim);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor& operator+=(Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

/// y[..., o] = sum_k x[..., k] * w[o, k]
inline Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.cols() != w.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  Shape s = x.shape();
  s.back() = w.dim(0);
  Tensor y(s);
  const std::size_t n = x.rows(), in = w.dim(1), out = w.dim(0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data().data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.data().data() + o * in;
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wr[k];
      y.at(r, o) = acc;
    }
  }
  return y;
}

/// Adds a bias along the last dimension.
inline Tensor add_bias(Tensor y, const Tensor& b) {
  if (b.size() != y.cols()) throw ShapeError("bias " + shape_str(b.shape()) + " vs output " + shape_str(y.shape()));
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y.at(r, c) += b[c];
  }
  return y;
}

/// dx[..., k] = sum_o dy[..., o] * w[o, k]
inline Tensor linear_input_grad(const Tensor& dy, const Tensor& w) {
  if (w.rank() != 2 || dy.cols() != w.dim(0)) throw ShapeError("linear_input_grad: shape mismatch");
  Shape s = dy.shape();
  s.back() = w.dim(1);
  Tensor dx(s);
  const std::size_t n = dy.rows(), in = w.dim(1), out = w.dim(0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dy.at(r, o);
      const double* wr = w.data().data() + o * in;
      for (std::size_t k = 0; k < in; ++k) dx.at(r, k) += g * wr[k];
    }
  }
  return dx;
}

/// dw[o, k] = sum over rows of dy[r, o] * x[r, k]
inline Tensor linear_weight_grad(const Tensor& dy, const Tensor& x) {
  if (dy.rows() != x.rows()) throw ShapeError("linear_weight_grad: row mismatch");
  Tensor dw({dy.cols(), x.cols()});
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    for (std::size_t o = 0; o < dy.cols(); ++o) {
      const double g = dy.at(r, o);
      for (std::size_t k = 0; k < x.cols(); ++k) dw.at(o, k) += g * x.at(r, k);
    }
  }
  return dw;
}

/// Column sums over all rows.
inline Tensor row_sum(const Tensor& dy) {
  Tensor out({dy.cols()});
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    for (std::size_t c = 0; c < dy.cols(); ++c) out[c] += dy.at(r, c);
  }
  return out;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

/// Norm-wise relative error max|a - b| / max|b|.
inline double max_rel_err(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_rel_err");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  if (diff == 0.0) return 0.0;
  const double ref = max_abs(b);
  return ref == 0.0 ? diff : diff / ref;
}

}  // namespace mpsim::tp
