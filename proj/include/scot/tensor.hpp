#pragma once

// Dense vectors and row-major matrices with the handful of kernels the rest
// of the library needs. Reductions run left to right so that single-threaded
// results are reproducible bit for bit.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "scot/error.hpp"

namespace scot {

template <std::floating_point T>
class Vec {
 public:
  using value_type = T;

  Vec() = default;
  explicit Vec(std::size_t dim, T fill = T(0)) : data_(dim, fill) {}
  explicit Vec(std::vector<T> data) : data_(std::move(data)) {}
  Vec(std::initializer_list<T> init) : data_(init) {}
  explicit Vec(std::span<const T> view) : data_(view.begin(), view.end()) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  operator std::span<const T>() const noexcept { return data_; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  const std::vector<T>& values() const noexcept { return data_; }

  bool operator==(const Vec&) const = default;

 private:
  std::vector<T> data_;
};

template <std::floating_point T>
class Mat {
 public:
  using value_type = T;

  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorKind::ShapeMismatch, "matrix data length does not match rows*cols");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void set_row(std::size_t r, std::span<const T> values);

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <std::floating_point T>
void Mat<T>::set_row(std::size_t r, std::span<const T> values) {
  if (values.size() != cols_) {
    throw Error(ErrorKind::DimMismatch, "row length does not match matrix columns");
  }
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
}

template <std::floating_point T>
T dot(std::span<const T> a, std::type_identity_t<std::span<const T>> b) noexcept {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <std::floating_point T>
T norm2(std::span<const T> a) noexcept {
  return std::sqrt(dot(a, a));
}

template <std::floating_point T>
bool all_finite(std::span<const T> a) noexcept {
  for (T x : a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

/// Norms below this are treated as zero by l2_normalize.
inline constexpr double kZeroNorm = 1e-12;

template <std::floating_point T>
Vec<T> l2_normalize(std::span<const T> v);

template <std::floating_point T>
Vec<T> l2_normalize(const Vec<T>& v) {
  return l2_normalize(v.span());
}

/// Entry (i,j) is the cosine similarity of A's row i and B's row j.
template <std::floating_point T>
Mat<T> cosine_matrix(const Mat<T>& a, const Mat<T>& b);

template <std::floating_point T>
T cosine(std::span<const T> a, std::span<const T> b);

/// log(sum(exp(xs))) computed as max + log(sum(exp(x - max))).
template <std::floating_point T>
T logsumexp(std::span<const T> xs);

/// Softmax weights of xs written into out; returns the log-sum-exp.
template <std::floating_point T>
T softmax_into(std::span<const T> xs, std::span<T> out);

template <std::floating_point U, std::floating_point T>
Vec<U> cast(const Vec<T>& v) {
  std::vector<U> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = static_cast<U>(v[i]);
  return Vec<U>(std::move(out));
}

template <std::floating_point U, std::floating_point T>
Mat<U> cast(const Mat<T>& m) {
  std::vector<U> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = static_cast<U>(m.data()[i]);
  return Mat<U>(m.rows(), m.cols(), std::move(out));
}

}  // namespace scot
