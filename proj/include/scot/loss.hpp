#pragma once

// Training objective over a batch of composed embeddings Vc (N x d), their
// modified-caption targets Tu and the original-caption embeddings T:
//
//   L_pos   = -log sum_i exp(S(Vc_i, Tu_i))
//   L'_neg  =  log sum_{i,j} exp(S_lam(Vc_i, Tu_j) * (1 - delta_ij))
//   L_cap   =  log sum_{i,j} exp(S_lam(Vc_i, T_j))
//   L''_neg =  L'_neg + L_cap
//   L       =  alpha_pos * L_pos + alpha_neg * L''_neg
//
// where S is cosine similarity and S_lam(x, y) = S if S > lam else 0. There is
// no 1/N normalization and no temperature. Diagonal terms of L'_neg contribute
// exp(0) = 1 each unless exclude_diagonal is set. Gates are treated as
// constant masks in the backward pass.

#include "scot/tensor.hpp"

namespace scot {

struct LossConfig {
  double margin = 0.2;
  double alpha_pos = 10.0;
  double alpha_neg = 0.1;
  double temperature = 0.07;  // clip_i2t_loss only
  bool exclude_diagonal = false;

  bool operator==(const LossConfig&) const = default;
};

/// Throws BadConfig on margin outside [-1,1], negative weights or temperature <= 0.
void validate(const LossConfig& cfg);

template <std::floating_point T>
T margin_sim(T s, T margin) noexcept {
  return s > margin ? s : T(0);
}

template <std::floating_point T>
struct LossTerm {
  T value = 0;
  Mat<T> grad;  // dValue/dVc, N x d
};

template <std::floating_point T>
struct LossBreakdown {
  T pos = 0;
  T neg_prime = 0;
  T caption_neg = 0;
  T neg_doubleprime = 0;
  T total = 0;
  Mat<T> grad;  // dL/dVc, N x d
};

template <std::floating_point T>
LossTerm<T> loss_pos(const Mat<T>& composed, const Mat<T>& targets);

template <std::floating_point T>
LossTerm<T> loss_neg_prime(const Mat<T>& composed, const Mat<T>& targets, T margin,
                           bool exclude_diagonal = false);

/// Only the original-caption part, log sum_{i,j} exp(S_lam(Vc_i, T_j)).
template <std::floating_point T>
LossTerm<T> loss_caption_neg(const Mat<T>& composed, const Mat<T>& originals, T margin);

/// L''_neg = L'_neg + L_cap.
template <std::floating_point T>
LossTerm<T> loss_neg_combined(const Mat<T>& composed, const Mat<T>& targets, const Mat<T>& originals,
                              T margin, bool exclude_diagonal = false);

template <std::floating_point T>
LossBreakdown<T> total_loss(const Mat<T>& composed, const Mat<T>& targets, const Mat<T>& originals,
                            const LossConfig& cfg);

/// -(1/N) sum_i log softmax_j(<V_i, T_j> / kappa)_i
template <std::floating_point T>
T clip_i2t_loss(const Mat<T>& images, const Mat<T>& texts, T temperature);

}  // namespace scot
