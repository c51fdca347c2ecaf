#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "scot/combiner.hpp"
#include "scot/embedding_store.hpp"

namespace scot {

/// Immutable gallery of unit-norm image embeddings.
class GalleryIndex {
 public:
  /// Validates rows (unit-norm within 1e-3, finite) and id uniqueness.
  explicit GalleryIndex(EmbeddingTable table);

  const EmbeddingTable& table() const noexcept { return table_; }
  std::size_t size() const noexcept { return table_.count(); }
  std::size_t dim() const noexcept { return table_.dim(); }

 private:
  EmbeddingTable table_;
};

struct RankedResult {
  std::string query_id;
  std::vector<std::string> ids;  // descending score, ties by ascending id
  std::vector<float> scores;
  /// True when ids covers every candidate (so any K is answerable).
  bool complete = false;

  bool operator==(const RankedResult&) const = default;
};

/// Ranking order: higher score first, then ascending id.
bool ranks_before(float score_a, const std::string& id_a, float score_b, const std::string& id_b) noexcept;

/// Exact top-K by cosine (dot product of unit rows). excluded_id, when set, is
/// removed from the candidates. Throws DimMismatch, BadK (K < 1 or K > candidates).
RankedResult search(const GalleryIndex& index, std::span<const float> query, std::size_t k,
                    const std::string& query_id = {}, const std::optional<std::string>& excluded_id = std::nullopt);

/// Ranks only subset members. Throws UnknownSubsetId for ids absent from the gallery.
RankedResult rank_subset(const GalleryIndex& index, std::span<const float> query,
                         const std::vector<std::string>& subset_ids, const std::string& query_id = {});

/// Fraction of results whose ground-truth target is among the first K ids.
/// Throws MissingGroundTruth, BadK.
double recall_at_k(const std::vector<RankedResult>& results,
                   const std::unordered_map<std::string, std::string>& ground_truth, std::size_t k);

enum class QueryMode { Scot, ImageOnly, TextOnly, ImagePlusText };

std::string_view to_string(QueryMode m) noexcept;
QueryMode parse_query_mode(std::string_view s);

struct ComposedQuery {
  Vec<float> vector;
  float s = 0;  // dynamic scalar
};

/// Eval-mode forward; deterministic.
ComposedQuery compose_query(const CombinerParams<float>& params, std::span<const float> image,
                            std::span<const float> text);

/// image_only -> V, text_only -> T_m, image_plus_text -> normalize(V + T_m).
/// Throws ZeroVector for antipodal inputs in the sum mode, BadConfig for Scot.
Vec<float> baseline_query(QueryMode mode, std::span<const float> image, std::span<const float> text);

struct QueryInputs {
  const GalleryIndex* gallery = nullptr;
  const EmbeddingTable* references = nullptr;    // reference_id lookup; gallery table when null
  const EmbeddingTable* modifications = nullptr;  // keyed by query id
  const std::vector<EvalQuery>* queries = nullptr;
};

/// Builds one query vector per EvalQuery. Throws UnknownId.
std::vector<ComposedQuery> build_queries(const QueryInputs& in, QueryMode mode,
                                         const CombinerParams<float>* params);

/// Subset-restricted recall for queries that carry subset_ids.
double recall_subset_at_k(const GalleryIndex& index, const std::vector<ComposedQuery>& query_vectors,
                          const std::vector<EvalQuery>& queries, std::size_t k);

struct ScalarStats {
  std::size_t count = 0;
  double mean = 0;
  double stddev = 0;
  double min = 0;
  double max = 0;
};

struct ModeReport {
  QueryMode mode = QueryMode::Scot;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> recall_subset;  // empty when no query has a subset
  std::optional<ScalarStats> s_stats;           // Scot mode only
  std::vector<RankedResult> results;            // top max(K) per query
  std::vector<RankedResult> subset_results;     // full subset ranking per query with a subset
};

struct EvalOptions {
  std::vector<std::size_t> ks = {1, 5, 10, 50};
  std::vector<QueryMode> modes = {QueryMode::Scot};
  bool exclude_reference = false;  // per-run; queries may also set it individually
  std::size_t threads = 1;
};

/// Throws BadConfig when Scot mode is requested without params.
std::vector<ModeReport> evaluate(const QueryInputs& in, const CombinerParams<float>* params,
                                 const EvalOptions& opts);

/// `metric=K=value` lines, e.g. "scot.recall=1=0.935000".
std::string format_report(const std::vector<ModeReport>& reports);
/// One JSON object per metric value.
std::string format_report_records(const std::vector<ModeReport>& reports);

/// One JSON object per ranked result, tagged with mode and subset flag.
void write_ranked_results(const std::vector<ModeReport>& reports, const std::filesystem::path& path);

struct DumpedResult {
  QueryMode mode = QueryMode::Scot;
  bool subset = false;
  RankedResult result;
};
std::vector<DumpedResult> read_ranked_results(const std::filesystem::path& path);

}  // namespace scot
