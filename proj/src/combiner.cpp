#include "scot/combiner.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace scot {

template <std::floating_point T>
CombinerTensors<T> CombinerTensors<T>::zeros(const CombinerDims& dims) {
  const auto [d, p, h] = dims;
  return {Mat<T>(p, d), Vec<T>(p), Mat<T>(p, d), Vec<T>(p), Mat<T>(h, 2 * p), Vec<T>(h),
          Mat<T>(d, h), Vec<T>(d), Mat<T>(1, 2 * p), Vec<T>(1)};
}

template <std::floating_point T>
std::array<std::span<T>, 10> CombinerTensors<T>::views() {
  return {W1.span(), b1.span(), W2.span(), b2.span(), W3.span(),
          b3.span(), W4.span(), b4.span(), W5.span(), b5.span()};
}

template <std::floating_point T>
std::array<std::span<const T>, 10> CombinerTensors<T>::views() const {
  return {W1.span(), b1.span(), W2.span(), b2.span(), W3.span(),
          b3.span(), W4.span(), b4.span(), W5.span(), b5.span()};
}

template <std::floating_point T>
std::size_t CombinerTensors<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto v : views()) n += v.size();
  return n;
}

template <std::floating_point T>
void CombinerTensors<T>::fill(T value) {
  for (auto v : views()) std::fill(v.begin(), v.end(), value);
}

void validate_dims(const CombinerDims& dims, double dropout_rate) {
  if (dims.d == 0 || dims.p == 0 || dims.h == 0) {
    throw Error(ErrorKind::BadDims, "combiner dims must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorKind::BadDims, "dropout_rate must be in [0, 1)");
  }
}

template <std::floating_point T>
CombinerParams<T> init_params(const CombinerDims& dims, double dropout_rate, std::uint64_t seed) {
  validate_dims(dims, dropout_rate);
  CombinerParams<T> params{dims, static_cast<float>(dropout_rate), CombinerTensors<T>::zeros(dims), 0};
  Rng rng(seed);
  auto fill_uniform = [&](Mat<T>& m) {
    const double bound = std::sqrt(1.0 / static_cast<double>(m.cols()));
    for (T& x : m.span()) x = static_cast<T>(rng.uniform(-bound, bound));
  };
  fill_uniform(params.w.W1);
  fill_uniform(params.w.W2);
  fill_uniform(params.w.W3);
  fill_uniform(params.w.W4);
  fill_uniform(params.w.W5);
  return params;
}

namespace {

template <std::floating_point T>
void affine(const Mat<T>& w, const Vec<T>& b, std::type_identity_t<std::span<const T>> x, Vec<T>& out) {
  for (std::size_t i = 0; i < w.rows(); ++i) out[i] = b[i] + dot(w.row(i), x);
}

template <std::floating_point T>
void draw_mask(Vec<T>& mask, double rate, Mode mode, Rng* rng) {
  if (mode == Mode::Eval || rate == 0.0) {
    std::fill(mask.begin(), mask.end(), T(1));
    return;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& m : mask) m = rng->next_double() < rate ? T(0) : keep_scale;
}

template <std::floating_point T>
T sigmoid(T z) {
  return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace

template <std::floating_point T>
ForwardResult<T> forward(const CombinerParams<T>& params, std::span<const T> image, std::span<const T> text,
                         Mode mode, Rng* rng) {
  const auto [d, p, h] = params.dims;
  if (image.size() != d || text.size() != d) {
    throw Error(ErrorKind::DimMismatch, "combiner expects inputs of dim " + std::to_string(d));
  }
  if (mode == Mode::Train && params.dropout_rate > 0 && rng == nullptr) {
    throw Error(ErrorKind::BadConfig, "train-mode dropout needs an Rng");
  }
  const auto& w = params.w;
  ForwardCache<T> c;
  c.dims = params.dims;
  c.params_version = params.version;
  c.image = Vec<T>(image);
  c.text = Vec<T>(text);
  c.a1 = Vec<T>(p);
  c.a2 = Vec<T>(p);
  c.mask1 = Vec<T>(p);
  c.mask2 = Vec<T>(p);
  c.c = Vec<T>(2 * p);
  c.a3 = Vec<T>(h);
  c.mask3 = Vec<T>(h);
  c.g = Vec<T>(h);
  c.out_raw = Vec<T>(d);

  draw_mask(c.mask1, params.dropout_rate, mode, rng);
  draw_mask(c.mask2, params.dropout_rate, mode, rng);
  draw_mask(c.mask3, params.dropout_rate, mode, rng);

  affine(w.W1, w.b1, text, c.a1);
  affine(w.W2, w.b2, image, c.a2);
  for (std::size_t i = 0; i < p; ++i) {
    c.c[i] = std::max(c.a1[i], T(0)) * c.mask1[i];
    c.c[p + i] = std::max(c.a2[i], T(0)) * c.mask2[i];
  }
  affine(w.W3, w.b3, std::as_const(c.c).span(), c.a3);
  for (std::size_t i = 0; i < h; ++i) c.g[i] = std::max(c.a3[i], T(0)) * c.mask3[i];

  c.z = w.b5[0] + dot(w.W5.row(0), c.c.span());
  c.s = sigmoid(c.z);
  for (std::size_t i = 0; i < d; ++i) {
    c.out_raw[i] = w.b4[i] + dot(w.W4.row(i), c.g.span()) + c.s * text[i] + (T(1) - c.s) * image[i];
  }
  c.out_norm = norm2(std::as_const(c.out_raw).span());
  if (!(c.out_norm >= T(1e-9))) {
    if (std::isnan(c.out_norm)) {
      // Let non-finite inputs surface as a non-finite loss downstream.
      c.composed = Vec<T>(d, c.out_norm);
    } else {
      throw Error(ErrorKind::DegenerateOutput, "combiner output norm below 1e-9");
    }
  } else {
    c.composed = Vec<T>(d);
    for (std::size_t i = 0; i < d; ++i) c.composed[i] = c.out_raw[i] / c.out_norm;
  }
  c.valid = true;
  ForwardResult<T> r;
  r.composed = c.composed;
  r.s = c.s;
  r.cache = std::move(c);
  return r;
}

template <std::floating_point T>
void backward_accumulate(const CombinerParams<T>& params, const ForwardCache<T>& cache,
                         std::span<const T> grad_composed, CombinerTensors<T>& acc,
                         std::span<T> grad_image, std::span<T> grad_text) {
  if (!cache.valid || cache.params_version != params.version || cache.dims != params.dims) {
    throw Error(ErrorKind::StaleCache, "forward cache does not match these parameters");
  }
  const auto [d, p, h] = params.dims;
  if (grad_composed.size() != d) throw Error(ErrorKind::DimMismatch, "grad_composed has wrong dim");
  const auto& w = params.w;

  // Through V_c = out / |out|: d out = (g - V_c (V_c . g)) / |out|.
  std::vector<T> g_out(d);
  const T proj = dot(cache.composed.span(), grad_composed);
  for (std::size_t i = 0; i < d; ++i) {
    g_out[i] = (grad_composed[i] - cache.composed[i] * proj) / cache.out_norm;
  }

  // Output head: o = W4 g + b4.
  std::vector<T> g_hidden(h, T(0));
  for (std::size_t i = 0; i < d; ++i) {
    const T go = g_out[i];
    acc.b4[i] += go;
    if (go == T(0)) continue;
    auto wrow = w.W4.row(i);
    auto arow = acc.W4.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      arow[j] += go * cache.g[j];
      g_hidden[j] += wrow[j] * go;
    }
  }

  // Skip path and dynamic scalar: out += s T_m + (1 - s) V.
  T g_s = 0;
  for (std::size_t i = 0; i < d; ++i) g_s += g_out[i] * (cache.text[i] - cache.image[i]);
  const T g_z = g_s * cache.s * (T(1) - cache.s);
  if (!grad_text.empty()) {
    for (std::size_t i = 0; i < d; ++i) grad_text[i] += cache.s * g_out[i];
  }
  if (!grad_image.empty()) {
    for (std::size_t i = 0; i < d; ++i) grad_image[i] += (T(1) - cache.s) * g_out[i];
  }

  std::vector<T> g_c(2 * p, T(0));
  acc.b5[0] += g_z;
  {
    auto wrow = w.W5.row(0);
    auto arow = acc.W5.row(0);
    for (std::size_t j = 0; j < 2 * p; ++j) {
      arow[j] += g_z * cache.c[j];
      g_c[j] += wrow[j] * g_z;
    }
  }

  // Hidden layer: g = mask3 * relu(a3), a3 = W3 c + b3.
  for (std::size_t i = 0; i < h; ++i) {
    const T ga = cache.a3[i] > T(0) ? g_hidden[i] * cache.mask3[i] : T(0);
    acc.b3[i] += ga;
    if (ga == T(0)) continue;
    auto wrow = w.W3.row(i);
    auto arow = acc.W3.row(i);
    for (std::size_t j = 0; j < 2 * p; ++j) {
      arow[j] += ga * cache.c[j];
      g_c[j] += wrow[j] * ga;
    }
  }

  // Projections: c = [mask1 * relu(W1 T_m + b1); mask2 * relu(W2 V + b2)].
  auto project_back = [&](const Mat<T>& wm, Vec<T>& gb, Mat<T>& gw, const Vec<T>& a, const Vec<T>& mask,
                          std::size_t offset, const Vec<T>& input, std::span<T> g_input) {
    for (std::size_t i = 0; i < p; ++i) {
      const T ga = a[i] > T(0) ? g_c[offset + i] * mask[i] : T(0);
      gb[i] += ga;
      if (ga == T(0)) continue;
      auto wrow = wm.row(i);
      auto arow = gw.row(i);
      for (std::size_t j = 0; j < d; ++j) arow[j] += ga * input[j];
      if (!g_input.empty()) {
        for (std::size_t j = 0; j < d; ++j) g_input[j] += wrow[j] * ga;
      }
    }
  };
  project_back(w.W1, acc.b1, acc.W1, cache.a1, cache.mask1, 0, cache.text, grad_text);
  project_back(w.W2, acc.b2, acc.W2, cache.a2, cache.mask2, p, cache.image, grad_image);
}

template <std::floating_point T>
CombinerGradients<T> backward(const CombinerParams<T>& params, const ForwardCache<T>& cache,
                              std::span<const T> grad_composed) {
  CombinerGradients<T> out{CombinerTensors<T>::zeros(params.dims), Vec<T>(params.dims.d),
                           Vec<T>(params.dims.d)};
  backward_accumulate(params, cache, grad_composed, out.params, out.image.span(), out.text.span());
  return out;
}

namespace {

template <class U>
void put(std::string& out, U value) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

template <class U>
U get(const std::string& bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(U)) throw Error(ErrorKind::CorruptPayload, "truncated checkpoint");
  U value;
  std::memcpy(&value, bytes.data() + pos, sizeof(U));
  pos += sizeof(U);
  return value;
}

}  // namespace

std::string encode_checkpoint(const CombinerParams<float>& params) {
  validate_dims(params.dims, params.dropout_rate);
  std::string out(kCkptMagic, sizeof(kCkptMagic));
  put<std::uint32_t>(out, kCkptVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.dims.d));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.dims.p));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.dims.h));
  put<float>(out, params.dropout_rate);
  for (auto v : params.w.views()) out.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  return out;
}

CombinerParams<float> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCkptMagic) || std::memcmp(bytes.data(), kCkptMagic, sizeof(kCkptMagic)) != 0) {
    throw Error(ErrorKind::BadMagic, "not a SCOT checkpoint");
  }
  std::size_t pos = sizeof(kCkptMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCkptVersion) throw Error(ErrorKind::VersionMismatch, "checkpoint version " + std::to_string(version));
  CombinerDims dims;
  dims.d = get<std::uint32_t>(bytes, pos);
  dims.p = get<std::uint32_t>(bytes, pos);
  dims.h = get<std::uint32_t>(bytes, pos);
  const auto rate = get<float>(bytes, pos);
  validate_dims(dims, rate);
  CombinerParams<float> params{dims, rate, CombinerTensors<float>::zeros(dims), 0};
  const std::size_t need = params.w.parameter_count() * sizeof(float);
  if (bytes.size() - pos != need) {
    throw Error(ErrorKind::CorruptPayload, "checkpoint payload is " + std::to_string(bytes.size() - pos) +
                                               " bytes, expected " + std::to_string(need));
  }
  for (auto v : params.w.views()) {
    std::memcpy(v.data(), bytes.data() + pos, v.size_bytes());
    pos += v.size_bytes();
  }
  for (auto v : params.w.views()) {
    if (!all_finite(std::span<const float>(v))) throw Error(ErrorKind::CorruptPayload, "non-finite checkpoint value");
  }
  return params;
}

void save_checkpoint(const CombinerParams<float>& params, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path.string() + "'");
}

CombinerParams<float> load_checkpoint(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  auto params = decode_checkpoint(ss.str());
  if (expected_dim && *expected_dim != params.dims.d) {
    throw Error(ErrorKind::ShapeMismatch, "checkpoint has d=" + std::to_string(params.dims.d) +
                                              ", expected " + std::to_string(*expected_dim));
  }
  return params;
}

#define SCOT_INSTANTIATE(T)                                                                              \
  template struct CombinerTensors<T>;                                                                    \
  template CombinerParams<T> init_params<T>(const CombinerDims&, double, std::uint64_t);                 \
  template ForwardResult<T> forward<T>(const CombinerParams<T>&, std::span<const T>, std::span<const T>, \
                                       Mode, Rng*);                                                      \
  template void backward_accumulate<T>(const CombinerParams<T>&, const ForwardCache<T>&,                 \
                                       std::span<const T>, CombinerTensors<T>&, std::span<T>,            \
                                       std::span<T>);                                                    \
  template CombinerGradients<T> backward<T>(const CombinerParams<T>&, const ForwardCache<T>&,            \
                                            std::span<const T>);

SCOT_INSTANTIATE(float)
SCOT_INSTANTIATE(double)
#undef SCOT_INSTANTIATE

}  // namespace scot
