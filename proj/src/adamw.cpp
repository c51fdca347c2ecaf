#include "scot/adamw.hpp"

#include <cmath>

namespace scot {

void validate(const AdamWConfig& cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw Error(ErrorKind::BadConfig, "AdamW betas must be in [0, 1)");
  }
  if (!(cfg.eps > 0.0)) throw Error(ErrorKind::BadConfig, "AdamW eps must be > 0");
  if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorKind::BadConfig, "weight_decay must be >= 0");
}

template <std::floating_point T>
AdamWState<T> AdamWState<T>::zeros_like(const CombinerTensors<T>& w) {
  AdamWState<T> s;
  for (auto v : w.views()) {
    s.m.emplace_back(v.size(), T(0));
    s.v.emplace_back(v.size(), T(0));
  }
  return s;
}

template <std::floating_point T>
void adamw_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::uint64_t step, const AdamWConfig& cfg, double lr) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw Error(ErrorKind::ShapeMismatch, "AdamW tensors have different sizes");
  }
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
  const T eps = static_cast<T>(cfg.eps);
  const T rate = static_cast<T>(lr);
  const T decay = static_cast<T>(lr * cfg.weight_decay);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T m_hat = m[i] / c1;
    const T v_hat = v[i] / c2;
    const T old = theta[i];
    theta[i] = old - rate * m_hat / (std::sqrt(v_hat) + eps) - decay * old;
  }
}

template <std::floating_point T>
void adamw_step(CombinerParams<T>& params, const CombinerTensors<T>& grads, AdamWState<T>& state,
                const AdamWConfig& cfg, double lr) {
  auto theta = params.w.views();
  const auto g = grads.views();
  if (state.m.size() != theta.size() || state.v.size() != theta.size()) {
    throw Error(ErrorKind::ShapeMismatch, "AdamW state does not mirror the parameters");
  }
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (g[k].size() != theta[k].size() || state.m[k].size() != theta[k].size() ||
        state.v[k].size() != theta[k].size()) {
      throw Error(ErrorKind::ShapeMismatch, "AdamW tensor " + std::to_string(k) + " has a mismatched shape");
    }
  }
  ++state.step;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    adamw_update<T>(theta[k], g[k], state.m[k], state.v[k], state.step, cfg, lr);
  }
  ++params.version;
}

#define SCOT_INSTANTIATE(T)                                                                             \
  template struct AdamWState<T>;                                                                        \
  template void adamw_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>,           \
                                std::uint64_t, const AdamWConfig&, double);                             \
  template void adamw_step<T>(CombinerParams<T>&, const CombinerTensors<T>&, AdamWState<T>&,            \
                              const AdamWConfig&, double);

SCOT_INSTANTIATE(float)
SCOT_INSTANTIATE(double)
#undef SCOT_INSTANTIATE

}  // namespace scot
