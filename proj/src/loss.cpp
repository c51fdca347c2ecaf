#include "scot/loss.hpp"

#include <cmath>

namespace scot {

void validate(const LossConfig& cfg) {
  if (!(cfg.margin >= -1.0 && cfg.margin <= 1.0)) throw Error(ErrorKind::BadConfig, "margin must be in [-1, 1]");
  if (!(cfg.alpha_pos >= 0.0) || !(cfg.alpha_neg >= 0.0)) {
    throw Error(ErrorKind::BadConfig, "alpha_pos and alpha_neg must be >= 0");
  }
  if (!(cfg.temperature > 0.0)) throw Error(ErrorKind::BadConfig, "temperature must be > 0");
}

namespace {

template <std::floating_point T>
void check_pair(const Mat<T>& a, const Mat<T>& b) {
  if (a.rows() == 0) throw Error(ErrorKind::EmptyBatch, "empty batch");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::DimMismatch, "loss operands have different shapes");
  }
}

// Unit rows and norms of a matrix, for the cosine gradient
// dS(x, y)/dx = (y_hat - S x_hat) / |x|.
template <std::floating_point T>
struct Normalized {
  Mat<T> unit;
  std::vector<T> norms;
};

template <std::floating_point T>
Normalized<T> normalize_rows(const Mat<T>& m) {
  Normalized<T> out{Mat<T>(m.rows(), m.cols()), std::vector<T>(m.rows())};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T n = norm2(m.row(r));
    if (!(n >= static_cast<T>(kZeroNorm)) && !std::isnan(n)) {
      throw Error(ErrorKind::ZeroVector, "zero row in loss operand");
    }
    out.norms[r] = n;
    auto dst = out.unit.row(r);
    auto src = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) dst[c] = src[c] / n;
  }
  return out;
}

template <std::floating_point T>
T unit_cos(const Normalized<T>& x, std::size_t i, const Normalized<T>& y, std::size_t j) {
  return dot(x.unit.row(i), y.unit.row(j));
}

// Adds w * dS(x_i, y_j)/dx_i into grad row i.
template <std::floating_point T>
void add_cos_grad(Mat<T>& grad, const Normalized<T>& x, std::size_t i, const Normalized<T>& y, std::size_t j,
                  T s, T w) {
  if (w == T(0)) return;
  auto g = grad.row(i);
  auto xu = x.unit.row(i);
  auto yu = y.unit.row(j);
  const T scale = w / x.norms[i];
  for (std::size_t c = 0; c < g.size(); ++c) g[c] += scale * (yu[c] - s * xu[c]);
}

// log sum over a gated similarity grid, with d/dS weights.
template <std::floating_point T>
LossTerm<T> gated_logsumexp(const Normalized<T>& x, const Normalized<T>& y, T margin, bool skip_diag_entirely,
                            bool zero_diag_exponent) {
  const std::size_t n = x.unit.rows();
  std::vector<T> sims;
  std::vector<T> exps;
  std::vector<std::pair<std::size_t, std::size_t>> where;
  sims.reserve(n * n);
  exps.reserve(n * n);
  where.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j && skip_diag_entirely) continue;
      const T s = unit_cos(x, i, y, j);
      sims.push_back(s);
      exps.push_back(i == j && zero_diag_exponent ? T(0) : margin_sim(s, margin));
      where.emplace_back(i, j);
    }
  }
  if (exps.empty()) throw Error(ErrorKind::EmptyBatch, "no terms left after excluding the diagonal");
  std::vector<T> w(exps.size());
  LossTerm<T> out{softmax_into<T>(exps, w), Mat<T>(n, x.unit.cols())};
  for (std::size_t k = 0; k < exps.size(); ++k) {
    const auto [i, j] = where[k];
    const bool gated_in = !(i == j && zero_diag_exponent) && sims[k] > margin;
    if (gated_in) add_cos_grad(out.grad, x, i, y, j, sims[k], w[k]);
  }
  return out;
}

}  // namespace

template <std::floating_point T>
LossTerm<T> loss_pos(const Mat<T>& composed, const Mat<T>& targets) {
  check_pair(composed, targets);
  const auto x = normalize_rows(composed);
  const auto y = normalize_rows(targets);
  const std::size_t n = composed.rows();
  std::vector<T> sims(n), w(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = unit_cos(x, i, y, i);
  LossTerm<T> out{-softmax_into<T>(sims, w), Mat<T>(n, composed.cols())};
  for (std::size_t i = 0; i < n; ++i) add_cos_grad(out.grad, x, i, y, i, sims[i], -w[i]);
  return out;
}

template <std::floating_point T>
LossTerm<T> loss_neg_prime(const Mat<T>& composed, const Mat<T>& targets, T margin, bool exclude_diagonal) {
  check_pair(composed, targets);
  return gated_logsumexp(normalize_rows(composed), normalize_rows(targets), margin, exclude_diagonal, true);
}

template <std::floating_point T>
LossTerm<T> loss_caption_neg(const Mat<T>& composed, const Mat<T>& originals, T margin) {
  check_pair(composed, originals);
  return gated_logsumexp(normalize_rows(composed), normalize_rows(originals), margin, false, false);
}

template <std::floating_point T>
LossTerm<T> loss_neg_combined(const Mat<T>& composed, const Mat<T>& targets, const Mat<T>& originals, T margin,
                              bool exclude_diagonal) {
  auto a = loss_neg_prime(composed, targets, margin, exclude_diagonal);
  auto b = loss_caption_neg(composed, originals, margin);
  a.value += b.value;
  for (std::size_t k = 0; k < a.grad.size(); ++k) a.grad.data()[k] += b.grad.data()[k];
  return a;
}

template <std::floating_point T>
LossBreakdown<T> total_loss(const Mat<T>& composed, const Mat<T>& targets, const Mat<T>& originals,
                            const LossConfig& cfg) {
  validate(cfg);
  check_pair(composed, targets);
  check_pair(composed, originals);
  const T margin = static_cast<T>(cfg.margin);
  const T ap = static_cast<T>(cfg.alpha_pos);
  const T an = static_cast<T>(cfg.alpha_neg);
  const auto pos = loss_pos(composed, targets);
  const auto negp = loss_neg_prime(composed, targets, margin, cfg.exclude_diagonal);
  const auto cap = loss_caption_neg(composed, originals, margin);

  LossBreakdown<T> out;
  out.pos = pos.value;
  out.neg_prime = negp.value;
  out.caption_neg = cap.value;
  out.neg_doubleprime = negp.value + cap.value;
  out.total = ap * out.pos + an * out.neg_doubleprime;
  out.grad = Mat<T>(composed.rows(), composed.cols());
  for (std::size_t k = 0; k < out.grad.size(); ++k) {
    out.grad.data()[k] = ap * pos.grad.data()[k] + an * (negp.grad.data()[k] + cap.grad.data()[k]);
  }
  return out;
}

template <std::floating_point T>
T clip_i2t_loss(const Mat<T>& images, const Mat<T>& texts, T temperature) {
  check_pair(images, texts);
  if (!(temperature > T(0))) throw Error(ErrorKind::BadConfig, "temperature must be > 0");
  const std::size_t n = images.rows();
  std::vector<T> logits(n);
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits[j] = dot(images.row(i), texts.row(j)) / temperature;
    acc += logsumexp<T>(logits) - logits[i];
  }
  return acc / static_cast<T>(n);
}

#define SCOT_INSTANTIATE(T)                                                                                  \
  template LossTerm<T> loss_pos<T>(const Mat<T>&, const Mat<T>&);                                            \
  template LossTerm<T> loss_neg_prime<T>(const Mat<T>&, const Mat<T>&, T, bool);                             \
  template LossTerm<T> loss_caption_neg<T>(const Mat<T>&, const Mat<T>&, T);                                 \
  template LossTerm<T> loss_neg_combined<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&, T, bool);          \
  template LossBreakdown<T> total_loss<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&, const LossConfig&); \
  template T clip_i2t_loss<T>(const Mat<T>&, const Mat<T>&, T);

SCOT_INSTANTIATE(float)
SCOT_INSTANTIATE(double)
#undef SCOT_INSTANTIATE

}  // namespace scot
