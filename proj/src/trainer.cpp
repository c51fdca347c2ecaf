#include "scot/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace scot {

using json = nlohmann::json;

std::string_view to_string(TargetSource s) noexcept { return s == TargetSource::Text ? "text" : "image"; }

TargetSource parse_target_source(std::string_view s) {
  if (s == "text") return TargetSource::Text;
  if (s == "image") return TargetSource::Image;
  throw Error(ErrorKind::BadConfig, "target_source must be 'text' or 'image'");
}

void validate(const TrainConfig& cfg) {
  if (cfg.min_batch < 2) throw Error(ErrorKind::BadConfig, "min_batch must be >= 2");
  if (cfg.batch_size < cfg.min_batch) throw Error(ErrorKind::BadConfig, "batch_size must be >= min_batch");
  if (!(cfg.learning_rate > 0.0)) throw Error(ErrorKind::BadConfig, "learning_rate must be > 0");
  if (cfg.threads == 0) throw Error(ErrorKind::BadConfig, "threads must be >= 1");
  validate(cfg.loss);
  validate(cfg.adamw);
}

Batches make_batches(std::size_t count, std::size_t batch_size, std::size_t min_batch, std::uint64_t seed,
                     std::uint64_t epoch) {
  if (count == 0) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  if (batch_size == 0) throw Error(ErrorKind::BadConfig, "batch_size must be positive");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, {0x5348554646ULL, epoch});
  for (std::size_t i = count - 1; i > 0; --i) {
    const std::size_t j = rng.bounded(static_cast<std::uint32_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  Batches out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    if (end - start < min_batch) {
      out.dropped = end - start;
      break;
    }
    out.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batches make_batches(std::span<const TrainingExample> dataset, const TrainConfig& cfg, std::uint64_t epoch) {
  return make_batches(dataset.size(), cfg.batch_size, cfg.min_batch, cfg.seed, epoch);
}

Rng item_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch, std::uint64_t item) {
  return Rng::derive(seed, {0x44524f50ULL, epoch, batch, item});
}

std::string to_json_line(const BatchRecord& r) {
  json rec;
  rec["epoch"] = r.epoch;
  rec["batch"] = r.batch;
  rec["L_pos"] = r.pos;
  rec["L_neg_prime"] = r.neg_prime;
  rec["L_caption_neg"] = r.caption_neg;
  rec["L_total"] = r.total;
  rec["wall_ms"] = r.wall_ms;
  return rec.dump();
}

TrainState fresh_state(CombinerParams<float> params) {
  TrainState s;
  s.optimizer = AdamWState<float>::zeros_like(params.w);
  s.params = std::move(params);
  return s;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t epoch) {
  return dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
}

namespace {

constexpr char kOptMagic[8] = {'S', 'C', 'O', 'T', 'O', 'P', 'T', '1'};

template <class U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

template <class U>
U get(const std::string& bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(U)) throw Error(ErrorKind::CorruptPayload, "truncated optimizer state");
  U value;
  std::memcpy(&value, bytes.data() + pos, sizeof(U));
  pos += sizeof(U);
  return value;
}

const Vec<float>& target_of(std::span<const TrainingExample> set, std::span<const Vec<float>> image_targets,
                            TargetSource source, std::size_t idx) {
  return source == TargetSource::Image ? image_targets[idx] : set[idx].target;
}

void check_inputs(std::span<const TrainingExample> set, const TrainConfig& cfg, std::size_t d,
                  std::span<const Vec<float>> image_targets) {
  if (set.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  if (cfg.target_source == TargetSource::Image && image_targets.size() != set.size()) {
    throw Error(ErrorKind::BadConfig, "target_source=image needs one image target per training example");
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& ex = set[i];
    if (ex.image.dim() != d || ex.modification.dim() != d || ex.target.dim() != d || ex.original.dim() != d ||
        (cfg.target_source == TargetSource::Image && image_targets[i].dim() != d)) {
      throw Error(ErrorKind::DimMismatch, "example '" + ex.id + "' does not match combiner dim " + std::to_string(d));
    }
  }
}

struct BatchWork {
  std::vector<ForwardCache<float>> caches;
  Mat<float> composed;
  Mat<float> targets;
  Mat<float> originals;
};

// Runs fn(begin, end, chunk) over [0, n) split into `threads` contiguous chunks.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
  const std::size_t chunks = std::max<std::size_t>(1, std::min(threads, n));
  if (chunks == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::exception_ptr> errors(chunks);
  {
    std::vector<std::jthread> pool;
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t begin = n * c / chunks;
      const std::size_t end = n * (c + 1) / chunks;
      pool.emplace_back([&fn, &errors, begin, end, c] {
        try {
          fn(begin, end, c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

BatchWork forward_batch(std::span<const TrainingExample> set, std::span<const std::size_t> batch,
                        const TrainConfig& cfg, const CombinerParams<float>& params, std::uint64_t epoch,
                        std::uint64_t batch_index, std::span<const Vec<float>> image_targets) {
  const std::size_t n = batch.size();
  const std::size_t d = params.dims.d;
  BatchWork w{std::vector<ForwardCache<float>>(n), Mat<float>(n, d), Mat<float>(n, d), Mat<float>(n, d)};
  parallel_chunks(n, cfg.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t k = begin; k < end; ++k) {
      const auto& ex = set[batch[k]];
      Rng rng = item_rng(cfg.seed, epoch, batch_index, k);
      auto fr = forward<float>(params, ex.image.span(), ex.modification.span(), Mode::Train, &rng);
      w.composed.set_row(k, fr.composed.span());
      w.targets.set_row(k, target_of(set, image_targets, cfg.target_source, batch[k]).span());
      w.originals.set_row(k, ex.original.span());
      w.caches[k] = std::move(fr.cache);
    }
  });
  return w;
}

std::string non_finite_report(std::span<const TrainingExample> set, std::span<const std::size_t> batch,
                              std::uint64_t epoch, std::uint64_t batch_index, const LossBreakdown<float>& loss) {
  std::ostringstream os;
  os << "epoch " << epoch << " batch " << batch_index << ": L_pos=" << loss.pos << " L_neg_prime=" << loss.neg_prime
     << " L_caption_neg=" << loss.caption_neg << " L_total=" << loss.total;
  std::vector<std::string> bad;
  for (std::size_t idx : batch) {
    const auto& ex = set[idx];
    if (!all_finite(ex.image.span()) || !all_finite(ex.modification.span()) || !all_finite(ex.target.span()) ||
        !all_finite(ex.original.span())) {
      bad.push_back(ex.id);
    }
  }
  if (!bad.empty()) {
    os << "; non-finite inputs in:";
    for (const auto& id : bad) os << ' ' << id;
  }
  return os.str();
}

}  // namespace

LossBreakdown<float> batch_loss(std::span<const TrainingExample> train_set, std::span<const std::size_t> batch,
                                const TrainConfig& cfg, const CombinerParams<float>& params, std::uint64_t epoch,
                                std::uint64_t batch_index, std::span<const Vec<float>> image_targets) {
  check_inputs(train_set, cfg, params.dims.d, image_targets);
  auto work = forward_batch(train_set, batch, cfg, params, epoch, batch_index, image_targets);
  return total_loss(work.composed, work.targets, work.originals, cfg.loss);
}

TrainResult train(std::span<const TrainingExample> train_set, const TrainConfig& cfg, TrainState init,
                  std::span<const Vec<float>> image_targets, const TrainIo& io) {
  validate(cfg);
  auto& params = init.params;
  check_inputs(train_set, cfg, params.dims.d, image_targets);
  if (init.optimizer.m.empty()) init.optimizer = AdamWState<float>::zeros_like(params.w);

  std::ofstream metrics;
  if (io.metrics_log) {
    if (io.metrics_log->has_parent_path()) std::filesystem::create_directories(io.metrics_log->parent_path());
    metrics.open(*io.metrics_log, std::ios::app);
    if (!metrics) throw Error(ErrorKind::IoError, "cannot open metrics log '" + io.metrics_log->string() + "'");
  }
  if (io.checkpoint_dir) std::filesystem::create_directories(*io.checkpoint_dir);

  TrainResult result;
  const std::size_t chunks = std::max<std::size_t>(1, cfg.threads);
  std::vector<CombinerTensors<float>> grads(chunks, CombinerTensors<float>::zeros(params.dims));

  for (std::uint64_t epoch = init.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    const Batches plan = make_batches(train_set, cfg, epoch);
    if (plan.dropped > 0 && io.log) {
      io.log("epoch " + std::to_string(epoch) + ": dropped " + std::to_string(plan.dropped) +
             " examples in a final batch smaller than min_batch");
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.dropped = plan.dropped;
    for (std::uint64_t b = 0; b < plan.batches.size(); ++b) {
      const auto started = std::chrono::steady_clock::now();
      const auto& batch = plan.batches[b];
      auto work = forward_batch(train_set, batch, cfg, params, epoch, b, image_targets);
      const auto loss = total_loss(work.composed, work.targets, work.originals, cfg.loss);
      if (!std::isfinite(loss.total)) {
        throw Error(ErrorKind::NonFiniteLoss, non_finite_report(train_set, batch, epoch, b, loss));
      }

      const std::size_t used = std::max<std::size_t>(1, std::min(chunks, batch.size()));
      for (std::size_t c = 0; c < used; ++c) grads[c].fill(0.0f);
      parallel_chunks(batch.size(), cfg.threads, [&](std::size_t begin, std::size_t end, std::size_t c) {
        for (std::size_t k = begin; k < end; ++k) {
          backward_accumulate<float>(params, work.caches[k], loss.grad.row(k), grads[c]);
        }
      });
      for (std::size_t c = 1; c < used; ++c) {
        auto dst = grads[0].views();
        const auto src = grads[c].views();
        for (std::size_t t = 0; t < dst.size(); ++t) {
          for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] += src[t][i];
        }
      }
      adamw_step(params, grads[0], init.optimizer, cfg.adamw, cfg.learning_rate);

      BatchRecord rec{epoch, b, loss.pos, loss.neg_prime, loss.caption_neg, loss.total, 0.0};
      if (!io.zero_wall_time) {
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
      }
      if (metrics) metrics << to_json_line(rec) << '\n';
      em.mean_pos += rec.pos;
      em.mean_neg_prime += rec.neg_prime;
      em.mean_caption_neg += rec.caption_neg;
      em.mean_total += rec.total;
      result.records.push_back(rec);
    }
    em.batches = plan.batches.size();
    if (em.batches > 0) {
      const double n = static_cast<double>(em.batches);
      em.mean_pos /= n;
      em.mean_neg_prime /= n;
      em.mean_caption_neg /= n;
      em.mean_total /= n;
    }
    result.epochs.push_back(em);
    init.epochs_done = epoch;
    if (io.checkpoint_dir) {
      const auto ckpt = checkpoint_path(*io.checkpoint_dir, epoch);
      save_checkpoint(params, ckpt);
      save_optimizer(init.optimizer, epoch, std::filesystem::path(ckpt).replace_extension(".opt"));
    }
    if (metrics) metrics.flush();
  }
  result.state = std::move(init);
  return result;
}

void save_optimizer(const AdamWState<float>& state, std::uint64_t epochs_done, const std::filesystem::path& path) {
  std::string out(kOptMagic, sizeof(kOptMagic));
  put<std::uint32_t>(out, 1);
  put<std::uint64_t>(out, state.step);
  put<std::uint64_t>(out, epochs_done);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.m.size()));
  for (std::size_t k = 0; k < state.m.size(); ++k) {
    put<std::uint64_t>(out, state.m[k].size());
    out.append(reinterpret_cast<const char*>(state.m[k].data()), state.m[k].size() * sizeof(float));
    out.append(reinterpret_cast<const char*>(state.v[k].data()), state.v[k].size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorKind::IoError, "write failed for '" + path.string() + "'");
}

std::pair<AdamWState<float>, std::uint64_t> load_optimizer(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < sizeof(kOptMagic) || std::memcmp(bytes.data(), kOptMagic, sizeof(kOptMagic)) != 0) {
    throw Error(ErrorKind::BadMagic, "not an optimizer state file");
  }
  std::size_t pos = sizeof(kOptMagic);
  if (get<std::uint32_t>(bytes, pos) != 1) throw Error(ErrorKind::VersionMismatch, "optimizer state version");
  AdamWState<float> state;
  state.step = get<std::uint64_t>(bytes, pos);
  const auto epochs_done = get<std::uint64_t>(bytes, pos);
  const auto tensors = get<std::uint32_t>(bytes, pos);
  for (std::uint32_t k = 0; k < tensors; ++k) {
    const auto len = get<std::uint64_t>(bytes, pos);
    if ((bytes.size() - pos) / (2 * sizeof(float)) < len) throw Error(ErrorKind::CorruptPayload, "truncated optimizer state");
    std::vector<float> m(len), v(len);
    std::memcpy(m.data(), bytes.data() + pos, len * sizeof(float));
    pos += len * sizeof(float);
    std::memcpy(v.data(), bytes.data() + pos, len * sizeof(float));
    pos += len * sizeof(float);
    state.m.push_back(std::move(m));
    state.v.push_back(std::move(v));
  }
  if (pos != bytes.size()) throw Error(ErrorKind::CorruptPayload, "trailing bytes in optimizer state");
  return {std::move(state), epochs_done};
}

TrainState load_train_state(const std::filesystem::path& checkpoint) {
  TrainState s;
  s.params = load_checkpoint(checkpoint);
  auto [opt, epochs] = load_optimizer(std::filesystem::path(checkpoint).replace_extension(".opt"));
  const auto views = s.params.w.views();
  if (opt.m.size() != views.size()) throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match checkpoint");
  for (std::size_t k = 0; k < views.size(); ++k) {
    if (opt.m[k].size() != views[k].size()) {
      throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match checkpoint");
    }
  }
  s.optimizer = std::move(opt);
  s.epochs_done = epochs;
  return s;
}

}  // namespace scot
