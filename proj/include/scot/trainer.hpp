#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scot/adamw.hpp"
#include "scot/combiner.hpp"
#include "scot/embedding_store.hpp"
#include "scot/loss.hpp"

namespace scot {

enum class TargetSource { Text, Image };

std::string_view to_string(TargetSource s) noexcept;
TargetSource parse_target_source(std::string_view s);

struct TrainConfig {
  std::size_t batch_size = 1024;
  double learning_rate = 1e-4;
  std::size_t epochs = 1;  // total; a resumed run continues up to this epoch
  std::uint64_t seed = 0;
  LossConfig loss;
  AdamWConfig adamw;
  TargetSource target_source = TargetSource::Text;
  std::size_t min_batch = 2;
  std::size_t threads = 1;
};

void validate(const TrainConfig& cfg);

struct Batches {
  std::vector<std::vector<std::size_t>> batches;  // indices into the dataset
  std::size_t dropped = 0;                         // examples in a too-small final batch
};

/// Shuffles 0..count-1 with an Rng derived from (seed, epoch) and cuts it into
/// batches. A final partial batch below min_batch is dropped.
Batches make_batches(std::size_t count, std::size_t batch_size, std::size_t min_batch, std::uint64_t seed,
                     std::uint64_t epoch);
Batches make_batches(std::span<const TrainingExample> dataset, const TrainConfig& cfg, std::uint64_t epoch);

/// Dropout stream for one item; independent of thread count.
Rng item_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch, std::uint64_t item);

struct BatchRecord {
  std::uint64_t epoch = 0;  // 1-based
  std::uint64_t batch = 0;  // 0-based within the epoch
  double pos = 0;
  double neg_prime = 0;
  double caption_neg = 0;
  double total = 0;
  double wall_ms = 0;
};

/// {epoch, batch, L_pos, L_neg_prime, L_caption_neg, L_total, wall_ms}
std::string to_json_line(const BatchRecord& r);

struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::size_t batches = 0;
  std::size_t dropped = 0;
  double mean_pos = 0;
  double mean_neg_prime = 0;
  double mean_caption_neg = 0;
  double mean_total = 0;
};

struct TrainState {
  CombinerParams<float> params;
  AdamWState<float> optimizer;
  std::uint64_t epochs_done = 0;
};

TrainState fresh_state(CombinerParams<float> params);

struct TrainIo {
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_{k}.ckpt + epoch_{k}.opt
  std::optional<std::filesystem::path> metrics_log;     // appended, one record per batch
  std::function<void(const std::string&)> log;          // human-readable notes
  bool zero_wall_time = false;                          // log wall_ms as 0 for byte-identical logs
};

struct TrainResult {
  TrainState state;
  std::vector<EpochMetrics> epochs;
  std::vector<BatchRecord> records;
};

/// Per batch: forward every item in train mode, take targets per
/// cfg.target_source (image_targets aligned with train_set when Image), evaluate
/// total_loss, backpropagate and apply one AdamW step.
/// Throws DimMismatch, BadConfig, or NonFiniteLoss with diagnostics.
TrainResult train(std::span<const TrainingExample> train_set, const TrainConfig& cfg, TrainState init,
                  std::span<const Vec<float>> image_targets = {}, const TrainIo& io = {});

/// Loss of one batch exactly as the trainer computes it (same dropout masks).
LossBreakdown<float> batch_loss(std::span<const TrainingExample> train_set, std::span<const std::size_t> batch,
                                const TrainConfig& cfg, const CombinerParams<float>& params,
                                std::uint64_t epoch, std::uint64_t batch_index,
                                std::span<const Vec<float>> image_targets = {});

/// "SCOTOPT1", u32 version=1, u64 step, u64 epochs_done, u32 tensor count,
/// then per tensor u64 length followed by m and v as f32.
void save_optimizer(const AdamWState<float>& state, std::uint64_t epochs_done, const std::filesystem::path& path);
std::pair<AdamWState<float>, std::uint64_t> load_optimizer(const std::filesystem::path& path);

/// Loads epoch_{k}.ckpt and its sibling .opt file.
TrainState load_train_state(const std::filesystem::path& checkpoint);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t epoch);

}  // namespace scot
