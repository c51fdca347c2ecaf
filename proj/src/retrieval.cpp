#include "scot/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace scot {

using json = nlohmann::json;

GalleryIndex::GalleryIndex(EmbeddingTable table) : table_(std::move(table)) { validate_rows(table_); }

bool ranks_before(float score_a, const std::string& id_a, float score_b, const std::string& id_b) noexcept {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

namespace {

void check_query(const GalleryIndex& index, std::span<const float> query) {
  if (query.size() != index.dim()) {
    throw Error(ErrorKind::DimMismatch, "query dim " + std::to_string(query.size()) + " vs gallery dim " +
                                            std::to_string(index.dim()));
  }
}

RankedResult rank_rows(const GalleryIndex& index, std::span<const float> query, std::vector<std::size_t> rows,
                       std::size_t k, const std::string& query_id) {
  const auto& table = index.table();
  std::vector<float> scores(table.count());
  for (std::size_t r : rows) scores[r] = dot(table.row(r), query);
  auto before = [&](std::size_t a, std::size_t b) {
    return ranks_before(scores[a], table.ids()[a], scores[b], table.ids()[b]);
  };
  const auto mid = rows.begin() + static_cast<std::ptrdiff_t>(k);
  std::partial_sort(rows.begin(), mid, rows.end(), before);
  RankedResult out;
  out.query_id = query_id;
  out.complete = k == rows.size();
  for (auto it = rows.begin(); it != mid; ++it) {
    out.ids.push_back(table.ids()[*it]);
    out.scores.push_back(scores[*it]);
  }
  return out;
}

}  // namespace

RankedResult search(const GalleryIndex& index, std::span<const float> query, std::size_t k,
                    const std::string& query_id, const std::optional<std::string>& excluded_id) {
  check_query(index, query);
  std::vector<std::size_t> rows;
  rows.reserve(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (excluded_id && index.table().ids()[r] == *excluded_id) continue;
    rows.push_back(r);
  }
  if (k < 1 || k > rows.size()) {
    throw Error(ErrorKind::BadK, "K=" + std::to_string(k) + " outside [1, " + std::to_string(rows.size()) + "]");
  }
  return rank_rows(index, query, std::move(rows), k, query_id);
}

RankedResult rank_subset(const GalleryIndex& index, std::span<const float> query,
                         const std::vector<std::string>& subset_ids, const std::string& query_id) {
  check_query(index, query);
  std::vector<std::size_t> rows;
  std::set<std::size_t> seen;
  for (const auto& id : subset_ids) {
    auto r = index.table().find(id);
    if (!r) throw Error(ErrorKind::UnknownSubsetId, "subset id '" + id + "' is not in the gallery");
    if (seen.insert(*r).second) rows.push_back(*r);
  }
  if (rows.empty()) throw Error(ErrorKind::BadK, "empty subset");
  const std::size_t k = rows.size();
  return rank_rows(index, query, std::move(rows), k, query_id);
}

double recall_at_k(const std::vector<RankedResult>& results,
                   const std::unordered_map<std::string, std::string>& ground_truth, std::size_t k) {
  if (k < 1) throw Error(ErrorKind::BadK, "K must be >= 1");
  if (results.empty()) throw Error(ErrorKind::EmptyInput, "no results to score");
  std::size_t hits = 0;
  for (const auto& r : results) {
    auto it = ground_truth.find(r.query_id);
    if (it == ground_truth.end()) throw Error(ErrorKind::MissingGroundTruth, "no ground truth for '" + r.query_id + "'");
    if (k > r.ids.size() && !r.complete) {
      throw Error(ErrorKind::BadK, "K=" + std::to_string(k) + " exceeds the " + std::to_string(r.ids.size()) +
                                       " results kept for '" + r.query_id + "'");
    }
    const std::size_t depth = std::min(k, r.ids.size());
    if (std::find(r.ids.begin(), r.ids.begin() + static_cast<std::ptrdiff_t>(depth), it->second) !=
        r.ids.begin() + static_cast<std::ptrdiff_t>(depth)) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

std::string_view to_string(QueryMode m) noexcept {
  switch (m) {
    case QueryMode::Scot: return "scot";
    case QueryMode::ImageOnly: return "image_only";
    case QueryMode::TextOnly: return "text_only";
    case QueryMode::ImagePlusText: return "image_plus_text";
  }
  return "unknown";
}

QueryMode parse_query_mode(std::string_view s) {
  for (auto m : {QueryMode::Scot, QueryMode::ImageOnly, QueryMode::TextOnly, QueryMode::ImagePlusText}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorKind::BadConfig, "unknown mode '" + std::string(s) + "'");
}

ComposedQuery compose_query(const CombinerParams<float>& params, std::span<const float> image,
                            std::span<const float> text) {
  auto fr = forward<float>(params, image, text, Mode::Eval);
  return {std::move(fr.composed), fr.s};
}

Vec<float> baseline_query(QueryMode mode, std::span<const float> image, std::span<const float> text) {
  if (image.size() != text.size()) throw Error(ErrorKind::DimMismatch, "image and text dims differ");
  switch (mode) {
    case QueryMode::ImageOnly: return Vec<float>(image);
    case QueryMode::TextOnly: return Vec<float>(text);
    case QueryMode::ImagePlusText: {
      Vec<float> sum(image.size());
      for (std::size_t i = 0; i < image.size(); ++i) sum[i] = image[i] + text[i];
      return l2_normalize(sum);
    }
    case QueryMode::Scot: break;
  }
  throw Error(ErrorKind::BadConfig, "scot is not a baseline mode");
}

std::vector<ComposedQuery> build_queries(const QueryInputs& in, QueryMode mode, const CombinerParams<float>* params) {
  if (mode == QueryMode::Scot && params == nullptr) {
    throw Error(ErrorKind::BadConfig, "mode scot needs a checkpoint");
  }
  const EmbeddingTable& refs = in.references ? *in.references : in.gallery->table();
  std::vector<ComposedQuery> out;
  out.reserve(in.queries->size());
  for (const auto& q : *in.queries) {
    auto image = refs.find(q.reference_id);
    if (!image) throw Error(ErrorKind::UnknownId, "unknown reference_id '" + q.reference_id + "'");
    auto text = in.modifications->find(q.id);
    if (!text) throw Error(ErrorKind::UnknownId, "no modification embedding for query '" + q.id + "'");
    if (mode == QueryMode::Scot) {
      out.push_back(compose_query(*params, refs.row(*image), in.modifications->row(*text)));
    } else {
      out.push_back({baseline_query(mode, refs.row(*image), in.modifications->row(*text)), 0.0f});
    }
  }
  return out;
}

double recall_subset_at_k(const GalleryIndex& index, const std::vector<ComposedQuery>& query_vectors,
                          const std::vector<EvalQuery>& queries, std::size_t k) {
  std::vector<RankedResult> results;
  std::unordered_map<std::string, std::string> truth;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    if (!q.subset_ids) continue;
    if (std::find(q.subset_ids->begin(), q.subset_ids->end(), q.target_id) == q.subset_ids->end()) {
      throw Error(ErrorKind::SubsetMissingTarget, "subset of '" + q.id + "' lacks its target");
    }
    results.push_back(rank_subset(index, query_vectors[i].vector.span(), *q.subset_ids, q.id));
    truth[q.id] = q.target_id;
  }
  return recall_at_k(results, truth, k);
}

std::vector<ModeReport> evaluate(const QueryInputs& in, const CombinerParams<float>* params,
                                 const EvalOptions& opts) {
  if (opts.ks.empty()) throw Error(ErrorKind::BadK, "no K values requested");
  const auto& queries = *in.queries;
  if (queries.empty()) throw Error(ErrorKind::EmptyInput, "no eval queries");
  const std::size_t max_k = *std::max_element(opts.ks.begin(), opts.ks.end());
  std::unordered_map<std::string, std::string> truth;
  bool any_subset = false;
  for (const auto& q : queries) {
    if (!in.gallery->table().find(q.target_id)) {
      throw Error(ErrorKind::MissingGroundTruth, "target '" + q.target_id + "' of '" + q.id + "' not in gallery");
    }
    truth[q.id] = q.target_id;
    any_subset = any_subset || q.subset_ids.has_value();
  }

  std::vector<ModeReport> reports;
  for (QueryMode mode : opts.modes) {
    ModeReport rep;
    rep.mode = mode;
    const auto vectors = build_queries(in, mode, params);
    rep.results.resize(queries.size());
    std::vector<std::exception_ptr> errors(std::max<std::size_t>(1, opts.threads));
    auto run = [&](std::size_t begin, std::size_t end, std::size_t slot) {
      try {
        for (std::size_t i = begin; i < end; ++i) {
          const auto& q = queries[i];
          std::optional<std::string> excluded;
          if (opts.exclude_reference || q.exclude_reference) excluded = q.reference_id;
          rep.results[i] = search(*in.gallery, vectors[i].vector.span(), max_k, q.id, excluded);
        }
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, queries.size()));
    if (workers == 1) {
      run(0, queries.size(), 0);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back(run, queries.size() * t / workers, queries.size() * (t + 1) / workers, t);
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (std::size_t k : opts.ks) rep.recall[k] = recall_at_k(rep.results, truth, k);
    if (any_subset) {
      for (std::size_t i = 0; i < queries.size(); ++i) {
        if (queries[i].subset_ids) {
          rep.subset_results.push_back(rank_subset(*in.gallery, vectors[i].vector.span(), *queries[i].subset_ids,
                                                   queries[i].id));
        }
      }
      for (std::size_t k : opts.ks) rep.recall_subset[k] = recall_at_k(rep.subset_results, truth, k);
    }
    if (mode == QueryMode::Scot) {
      ScalarStats st;
      st.count = vectors.size();
      st.min = vectors.front().s;
      st.max = vectors.front().s;
      for (const auto& v : vectors) {
        st.mean += v.s;
        st.min = std::min<double>(st.min, v.s);
        st.max = std::max<double>(st.max, v.s);
      }
      st.mean /= static_cast<double>(st.count);
      for (const auto& v : vectors) st.stddev += (v.s - st.mean) * (v.s - st.mean);
      st.stddev = std::sqrt(st.stddev / static_cast<double>(st.count));
      rep.s_stats = st;
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string format_report(const std::vector<ModeReport>& reports) {
  std::ostringstream os;
  for (const auto& rep : reports) {
    const std::string mode(to_string(rep.mode));
    for (const auto& [k, v] : rep.recall) os << mode << ".recall=" << k << '=' << fixed(v) << '\n';
    for (const auto& [k, v] : rep.recall_subset) os << mode << ".recall_subset=" << k << '=' << fixed(v) << '\n';
    if (rep.s_stats) {
      os << mode << ".s_mean=-=" << fixed(rep.s_stats->mean) << '\n';
      os << mode << ".s_std=-=" << fixed(rep.s_stats->stddev) << '\n';
      os << mode << ".s_min=-=" << fixed(rep.s_stats->min) << '\n';
      os << mode << ".s_max=-=" << fixed(rep.s_stats->max) << '\n';
    }
  }
  return os.str();
}

std::string format_report_records(const std::vector<ModeReport>& reports) {
  std::string out;
  auto emit = [&](const std::string& mode, const char* metric, json k, double v) {
    json rec{{"mode", mode}, {"metric", metric}, {"k", std::move(k)}, {"value", v}};
    out += rec.dump();
    out += '\n';
  };
  for (const auto& rep : reports) {
    const std::string mode(to_string(rep.mode));
    for (const auto& [k, v] : rep.recall) emit(mode, "recall", k, v);
    for (const auto& [k, v] : rep.recall_subset) emit(mode, "recall_subset", k, v);
    if (rep.s_stats) {
      emit(mode, "s_mean", nullptr, rep.s_stats->mean);
      emit(mode, "s_std", nullptr, rep.s_stats->stddev);
      emit(mode, "s_min", nullptr, rep.s_stats->min);
      emit(mode, "s_max", nullptr, rep.s_stats->max);
    }
  }
  return out;
}

void write_ranked_results(const std::vector<ModeReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  auto emit = [&](const ModeReport& rep, const RankedResult& r, bool subset) {
    json rec{{"mode", to_string(rep.mode)}, {"query_id", r.query_id}, {"subset", subset},
             {"complete", r.complete},      {"ids", r.ids},           {"scores", r.scores}};
    out << rec.dump() << '\n';
  };
  for (const auto& rep : reports) {
    for (const auto& r : rep.results) emit(rep, r, false);
    for (const auto& r : rep.subset_results) emit(rep, r, true);
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path.string() + "'");
}

std::vector<DumpedResult> read_ranked_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::vector<DumpedResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      DumpedResult d;
      d.mode = parse_query_mode(rec.at("mode").get<std::string>());
      d.subset = rec.at("subset").get<bool>();
      d.result.query_id = rec.at("query_id").get<std::string>();
      d.result.complete = rec.at("complete").get<bool>();
      d.result.ids = rec.at("ids").get<std::vector<std::string>>();
      d.result.scores = rec.at("scores").get<std::vector<float>>();
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace scot
