#include "scot/tensor.hpp"

#include <algorithm>
#include <limits>

namespace scot {

template <std::floating_point T>
Vec<T> l2_normalize(std::span<const T> v) {
  if (v.empty()) throw Error(ErrorKind::ZeroVector, "cannot normalize an empty vector");
  const T n = norm2(v);
  if (!(n >= static_cast<T>(kZeroNorm))) {
    throw Error(ErrorKind::ZeroVector, "vector norm below 1e-12");
  }
  Vec<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

template <std::floating_point T>
T cosine(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::DimMismatch, "cosine of vectors with different dims");
  const T na = norm2(a);
  const T nb = norm2(b);
  if (!(na >= static_cast<T>(kZeroNorm)) || !(nb >= static_cast<T>(kZeroNorm))) {
    throw Error(ErrorKind::ZeroVector, "cosine of a zero vector");
  }
  return dot(a, b) / (na * nb);
}

template <std::floating_point T>
Mat<T> cosine_matrix(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::DimMismatch, "cosine_matrix operands have different column counts");
  }
  auto row_norms = [](const Mat<T>& m) {
    std::vector<T> norms(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      norms[r] = norm2(m.row(r));
      if (!(norms[r] >= static_cast<T>(kZeroNorm))) {
        throw Error(ErrorKind::ZeroVector, "cosine_matrix operand has a zero row");
      }
    }
    return norms;
  };
  const auto na = row_norms(a);
  const auto nb = row_norms(b);
  Mat<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out(i, j) = dot(a.row(i), b.row(j)) / (na[i] * nb[j]);
    }
  }
  return out;
}

template <std::floating_point T>
T logsumexp(std::span<const T> xs) {
  if (xs.empty()) throw Error(ErrorKind::EmptyInput, "logsumexp of an empty sequence");
  const T mx = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(mx)) return mx;
  T acc = 0;
  for (T x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

template <std::floating_point T>
T softmax_into(std::span<const T> xs, std::span<T> out) {
  if (xs.empty()) throw Error(ErrorKind::EmptyInput, "softmax of an empty sequence");
  const T mx = *std::max_element(xs.begin(), xs.end());
  T acc = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - mx);
    acc += out[i];
  }
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] /= acc;
  return mx + std::log(acc);
}

#define SCOT_INSTANTIATE(T)                                              \
  template Vec<T> l2_normalize<T>(std::span<const T>);                   \
  template T cosine<T>(std::span<const T>, std::span<const T>);          \
  template Mat<T> cosine_matrix<T>(const Mat<T>&, const Mat<T>&);        \
  template T logsumexp<T>(std::span<const T>);                           \
  template T softmax_into<T>(std::span<const T>, std::span<T>);

SCOT_INSTANTIATE(float)
SCOT_INSTANTIATE(double)
#undef SCOT_INSTANTIATE

}  // namespace scot
