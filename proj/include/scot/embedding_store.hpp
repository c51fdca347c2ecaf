#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "scot/tensor.hpp"

namespace scot {

/// Id-indexed table of unit-norm embeddings as produced by a frozen encoder.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// Validates ids (unique, nonempty) and shapes. Norms are checked by
  /// validate_rows() / read_table(), not here.
  EmbeddingTable(std::vector<std::string> ids, Mat<float> matrix, std::string source_tag = {});

  std::size_t count() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return matrix_.cols(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Mat<float>& matrix() const noexcept { return matrix_; }
  const std::string& source_tag() const noexcept { return source_tag_; }

  std::optional<std::size_t> find(const std::string& id) const;
  /// Row for id; throws UnknownId.
  std::span<const float> row(const std::string& id) const;
  std::span<const float> row(std::size_t index) const { return matrix_.row(index); }

  bool operator==(const EmbeddingTable& other) const {
    return ids_ == other.ids_ && matrix_ == other.matrix_ && source_tag_ == other.source_tag_;
  }

 private:
  std::vector<std::string> ids_;
  Mat<float> matrix_;
  std::string source_tag_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Rows within this distance of unit norm are accepted and re-normalized on read.
inline constexpr double kNormTolerance = 1e-3;
/// Rows already within this distance of unit norm are left bit-for-bit unchanged.
inline constexpr double kUnitExact = 1e-6;

/// Checks every row is finite and unit-norm within kNormTolerance.
void validate_rows(const EmbeddingTable& table);

/// SEMB layout (little-endian): "SCOTEMB1", u32 version=1, u64 count,
/// u32 dim, u8 dtype=0 (f32), 3 reserved zero bytes, count*dim f32 payload,
/// count u16-length-prefixed UTF-8 ids, one u16-length-prefixed source tag.
inline constexpr char kSembMagic[8] = {'S', 'C', 'O', 'T', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kSembVersion = 1;
inline constexpr std::size_t kSembHeaderBytes = 28;

void write_table(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_table(const std::filesystem::path& path);

/// Byte-level codec behind write_table/read_table.
std::string encode_semb(const EmbeddingTable& table);
EmbeddingTable decode_semb(const std::string& bytes);

struct TextTriplet {
  std::string id;
  std::string caption;
  std::string modification;
  std::string modified_caption;

  bool operator==(const TextTriplet&) const = default;
};

struct TrainingExample {
  std::string id;
  Vec<float> image;            // reference image embedding
  Vec<float> modification;     // modification-text embedding
  Vec<float> target;           // modified-caption embedding
  Vec<float> original;         // original-caption embedding
};

struct EvalQuery {
  std::string id;
  std::string reference_id;
  std::string modification_text;
  std::string target_id;
  std::optional<std::vector<std::string>> subset_ids;
  bool exclude_reference = false;

  bool operator==(const EvalQuery&) const = default;
};

/// Newline-delimited JSON objects with string fields id, caption,
/// modification, modified_caption. Blank lines are skipped.
std::vector<TextTriplet> load_triplets(const std::filesystem::path& path);
std::string triplet_to_json_line(const TextTriplet& t);
void write_triplets(const std::vector<TextTriplet>& triplets, const std::filesystem::path& path);

std::vector<EvalQuery> load_eval_queries(const std::filesystem::path& path);
void write_eval_queries(const std::vector<EvalQuery>& queries, const std::filesystem::path& path);

struct AssembledSet {
  std::vector<TrainingExample> examples;
  /// Ids present in at least one table but not all four, sorted.
  std::vector<std::string> missing_ids;
};

/// Joins the four tables by id. Output follows the row order of `images`.
AssembledSet assemble_training_set(const EmbeddingTable& images, const EmbeddingTable& mods,
                                   const EmbeddingTable& targets, const EmbeddingTable& originals);

}  // namespace scot
