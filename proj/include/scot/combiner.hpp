#pragma once

// Learnable composition of a reference-image embedding and a modification-text
// embedding:
//
//   t_p = Drop(ReLU(W1 T_m + b1))     v_p = Drop(ReLU(W2 V + b2))
//   c   = [t_p; v_p]
//   g   = Drop(ReLU(W3 c + b3))       o   = W4 g + b4
//   s   = sigmoid(W5 c + b5)
//   out = o + s T_m + (1 - s) V       V_c = out / |out|
//
// Gradients are derived by hand; see backward().

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include "scot/rng.hpp"
#include "scot/tensor.hpp"

namespace scot {

struct CombinerDims {
  std::size_t d = 0;  // embedding dim
  std::size_t p = 0;  // projection dim
  std::size_t h = 0;  // hidden dim

  bool operator==(const CombinerDims&) const = default;
};

/// Default projection/hidden ratios: p = 4d, h = 8d.
inline CombinerDims default_dims(std::size_t d) { return {d, 4 * d, 8 * d}; }

template <std::floating_point T>
struct CombinerTensors {
  Mat<T> W1;  // p x d, text projection
  Vec<T> b1;
  Mat<T> W2;  // p x d, image projection
  Vec<T> b2;
  Mat<T> W3;  // h x 2p
  Vec<T> b3;
  Mat<T> W4;  // d x h
  Vec<T> b4;
  Mat<T> W5;  // 1 x 2p, dynamic scalar head
  Vec<T> b5;  // 1

  static CombinerTensors zeros(const CombinerDims& dims);

  /// Tensors in serialization order W1,b1,...,W5,b5.
  std::array<std::span<T>, 10> views();
  std::array<std::span<const T>, 10> views() const;

  std::size_t parameter_count() const;
  void fill(T value);

  bool operator==(const CombinerTensors&) const = default;
};

template <std::floating_point T>
struct CombinerParams {
  CombinerDims dims;
  float dropout_rate = 0.0f;  // stored as f32 in checkpoints
  CombinerTensors<T> w;
  /// Bumped on every in-place update; caches from older versions are stale.
  std::uint64_t version = 0;

  bool same_values(const CombinerParams& o) const {
    return dims == o.dims && dropout_rate == o.dropout_rate && w == o.w;
  }
};

/// Throws BadDims for zero dims or a dropout rate outside [0, 1).
void validate_dims(const CombinerDims& dims, double dropout_rate);

/// Weights uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero.
template <std::floating_point T>
CombinerParams<T> init_params(const CombinerDims& dims, double dropout_rate, std::uint64_t seed);

enum class Mode { Train, Eval };

template <std::floating_point T>
struct ForwardCache {
  bool valid = false;
  std::uint64_t params_version = 0;
  CombinerDims dims;
  Vec<T> image;         // V
  Vec<T> text;          // T_m
  Vec<T> a1, mask1;     // text projection pre-activation and dropout mask
  Vec<T> a2, mask2;     // image projection
  Vec<T> c;             // concat(t_p, v_p)
  Vec<T> a3, mask3;     // hidden
  Vec<T> g;             // hidden activation after dropout
  T z = 0;              // dynamic-scalar logit
  T s = 0;
  Vec<T> out_raw;
  T out_norm = 0;
  Vec<T> composed;      // V_c
};

template <std::floating_point T>
struct ForwardResult {
  Vec<T> composed;
  T s = 0;
  ForwardCache<T> cache;
};

/// In Train mode with dropout_rate > 0, rng supplies the dropout masks and
/// must be non-null. Throws DimMismatch or DegenerateOutput (|out| < 1e-9).
template <std::floating_point T>
ForwardResult<T> forward(const CombinerParams<T>& params, std::span<const T> image, std::span<const T> text,
                         Mode mode, Rng* rng = nullptr);

template <std::floating_point T>
struct CombinerGradients {
  CombinerTensors<T> params;
  Vec<T> image;  // dL/dV
  Vec<T> text;   // dL/dT_m
};

/// Adds dL/dparams into acc. dL/dV and dL/dT_m go to the optional outputs.
/// Throws StaleCache when cache did not come from forward on these params.
template <std::floating_point T>
void backward_accumulate(const CombinerParams<T>& params, const ForwardCache<T>& cache,
                         std::span<const T> grad_composed, CombinerTensors<T>& acc,
                         std::span<T> grad_image = {}, std::span<T> grad_text = {});

template <std::floating_point T>
CombinerGradients<T> backward(const CombinerParams<T>& params, const ForwardCache<T>& cache,
                              std::span<const T> grad_composed);

/// "SCOTCKPT", u32 version=1, u32 d, u32 p, u32 h, f32 dropout_rate, then
/// W1,b1,W2,b2,W3,b3,W4,b4,W5,b5 as little-endian f32 row-major.
inline constexpr char kCkptMagic[8] = {'S', 'C', 'O', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCkptVersion = 1;

void save_checkpoint(const CombinerParams<float>& params, const std::filesystem::path& path);
/// Throws ShapeMismatch when expected_dim is set and differs from the file.
CombinerParams<float> load_checkpoint(const std::filesystem::path& path,
                                      std::optional<std::size_t> expected_dim = std::nullopt);

std::string encode_checkpoint(const CombinerParams<float>& params);
CombinerParams<float> decode_checkpoint(const std::string& bytes);

}  // namespace scot
