#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "scot/combiner.hpp"

namespace scot {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWConfig&) const = default;
};

void validate(const AdamWConfig& cfg);

/// First/second moments per parameter tensor, in CombinerTensors::views() order.
template <std::floating_point T>
struct AdamWState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  static AdamWState zeros_like(const CombinerTensors<T>& w);
  bool operator==(const AdamWState&) const = default;
};

/// One decoupled-weight-decay update of a flat tensor at 1-based step `step`:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
template <std::floating_point T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::uint64_t step, const AdamWConfig& cfg, double lr);

/// Applies adamw_update to every tensor and bumps params.version.
/// Throws ShapeMismatch when grads or state do not mirror params.
template <std::floating_point T>
void adamw_step(CombinerParams<T>& params, const CombinerTensors<T>& grads, AdamWState<T>& state,
                const AdamWConfig& cfg, double lr);

}  // namespace scot
