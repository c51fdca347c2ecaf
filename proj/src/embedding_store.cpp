#include "scot/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace scot {

using json = nlohmann::json;

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, Mat<float> matrix,
                               std::string source_tag)
    : ids_(std::move(ids)), matrix_(std::move(matrix)), source_tag_(std::move(source_tag)) {
  if (ids_.size() != matrix_.rows()) {
    throw Error(ErrorKind::InvariantViolation, "id count does not match matrix rows");
  }
  if (matrix_.cols() == 0) throw Error(ErrorKind::InvariantViolation, "table dim must be positive");
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i].empty()) throw Error(ErrorKind::InvariantViolation, "empty id at row " + std::to_string(i));
    if (!index_.emplace(ids_[i], i).second) {
      throw Error(ErrorKind::InvariantViolation, "duplicate id '" + ids_[i] + "'");
    }
  }
}

std::optional<std::size_t> EmbeddingTable::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingTable::row(const std::string& id) const {
  auto idx = find(id);
  if (!idx) throw Error(ErrorKind::UnknownId, "unknown id '" + id + "'");
  return matrix_.row(*idx);
}

namespace {

double row_norm(std::span<const float> row) {
  double acc = 0;
  for (float x : row) acc += static_cast<double>(x) * x;
  return std::sqrt(acc);
}

void check_row(std::span<const float> row, const std::string& id) {
  if (!all_finite(row)) throw Error(ErrorKind::CorruptPayload, "non-finite value in row '" + id + "'");
  const double n = row_norm(row);
  if (n < kZeroNorm) throw Error(ErrorKind::ZeroVector, "zero row '" + id + "'");
  if (std::abs(n - 1.0) > kNormTolerance) {
    std::ostringstream os;
    os << "row '" << id << "' has norm " << n;
    throw Error(ErrorKind::NotNormalized, os.str());
  }
}

template <class U>
void put(std::string& out, U value) {
  static_assert(std::endian::native == std::endian::little, "SEMB I/O assumes a little-endian host");
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

void put_string(std::string& out, const std::string& s) {
  if (s.size() > 0xFFFF) throw Error(ErrorKind::InvariantViolation, "string longer than 65535 bytes");
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  std::string get_string() {
    const auto len = get<std::uint16_t>();
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void read_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorKind::CorruptPayload, "truncated SEMB data");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path.string() + "'");
}

template <class Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!rec.is_object()) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(lineno) + ": record is not an object");
    }
    fn(rec, lineno);
  }
}

std::string string_field(const json& rec, const char* key, std::size_t lineno) {
  auto it = rec.find(key);
  if (it == rec.end() || !it->is_string()) {
    throw Error(ErrorKind::ParseError,
                "line " + std::to_string(lineno) + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

void validate_rows(const EmbeddingTable& table) {
  for (std::size_t i = 0; i < table.count(); ++i) check_row(table.row(i), table.ids()[i]);
}

std::string encode_semb(const EmbeddingTable& table) {
  validate_rows(table);
  std::string out;
  out.reserve(kSembHeaderBytes + table.count() * table.dim() * sizeof(float) + table.count() * 16);
  out.append(kSembMagic, sizeof(kSembMagic));
  put<std::uint32_t>(out, kSembVersion);
  put<std::uint64_t>(out, table.count());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim()));
  put<std::uint8_t>(out, 0);
  out.append(3, '\0');
  const auto payload = table.matrix().span();
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size_bytes());
  for (const auto& id : table.ids()) put_string(out, id);
  put_string(out, table.source_tag());
  return out;
}

EmbeddingTable decode_semb(const std::string& bytes) {
  if (bytes.size() < sizeof(kSembMagic) ||
      std::memcmp(bytes.data(), kSembMagic, sizeof(kSembMagic)) != 0) {
    throw Error(ErrorKind::BadMagic, "not a SEMB file");
  }
  Reader r(bytes);
  for (std::size_t i = 0; i < sizeof(kSembMagic); ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kSembVersion) {
    throw Error(ErrorKind::VersionMismatch, "SEMB version " + std::to_string(version));
  }
  const auto count = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint32_t>();
  const auto dtype = r.get<std::uint8_t>();
  for (int i = 0; i < 3; ++i) {
    if (r.get<std::uint8_t>() != 0) throw Error(ErrorKind::CorruptPayload, "reserved bytes not zero");
  }
  if (dtype != 0) throw Error(ErrorKind::CorruptPayload, "unsupported dtype " + std::to_string(dtype));
  if (dim == 0) throw Error(ErrorKind::CorruptPayload, "dim is zero");
  if (count > r.remaining() / (static_cast<std::uint64_t>(dim) * sizeof(float))) {
    throw Error(ErrorKind::CorruptPayload, "payload shorter than count*dim");
  }
  std::vector<float> payload(count * dim);
  r.read_floats(payload.data(), payload.size());
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) ids.push_back(r.get_string());
  std::string tag = r.get_string();
  if (r.remaining() != 0) throw Error(ErrorKind::CorruptPayload, "trailing bytes after source tag");

  Mat<float> matrix(count, dim, std::move(payload));
  for (std::size_t i = 0; i < count; ++i) {
    auto row = matrix.row(i);
    const std::string& id = ids[i];
    check_row(row, id);
    const double n = row_norm(row);
    if (std::abs(n - 1.0) > kUnitExact) {
      for (float& x : row) x = static_cast<float>(x / n);
    }
  }
  return EmbeddingTable(std::move(ids), std::move(matrix), std::move(tag));
}

void write_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  write_file(path, encode_semb(table));
}

EmbeddingTable read_table(const std::filesystem::path& path) { return decode_semb(read_file(path)); }

std::vector<TextTriplet> load_triplets(const std::filesystem::path& path) {
  std::vector<TextTriplet> out;
  for_each_record(path, [&](const json& rec, std::size_t lineno) {
    TextTriplet t{string_field(rec, "id", lineno), string_field(rec, "caption", lineno),
                  string_field(rec, "modification", lineno),
                  string_field(rec, "modified_caption", lineno)};
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (t.caption.empty() || t.modification.empty() || t.modified_caption.empty()) {
      throw Error(ErrorKind::InvariantViolation, where + "empty text field");
    }
    if (t.modified_caption == t.caption) {
      throw Error(ErrorKind::InvariantViolation, where + "modified_caption equals caption");
    }
    out.push_back(std::move(t));
  });
  return out;
}

std::string triplet_to_json_line(const TextTriplet& t) {
  json rec;
  rec["id"] = t.id;
  rec["caption"] = t.caption;
  rec["modification"] = t.modification;
  rec["modified_caption"] = t.modified_caption;
  return rec.dump();
}

void write_triplets(const std::vector<TextTriplet>& triplets, const std::filesystem::path& path) {
  std::string out;
  for (const auto& t : triplets) {
    out += triplet_to_json_line(t);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<EvalQuery> load_eval_queries(const std::filesystem::path& path) {
  std::vector<EvalQuery> out;
  for_each_record(path, [&](const json& rec, std::size_t lineno) {
    EvalQuery q;
    q.id = string_field(rec, "id", lineno);
    q.reference_id = string_field(rec, "reference_id", lineno);
    q.modification_text = string_field(rec, "modification_text", lineno);
    q.target_id = string_field(rec, "target_id", lineno);
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (auto it = rec.find("subset_ids"); it != rec.end() && !it->is_null()) {
      if (!it->is_array()) throw Error(ErrorKind::ParseError, where + "subset_ids is not an array");
      std::vector<std::string> subset;
      for (const auto& s : *it) {
        if (!s.is_string()) throw Error(ErrorKind::ParseError, where + "subset_ids entry is not a string");
        subset.push_back(s.get<std::string>());
      }
      if (subset.size() < 2) throw Error(ErrorKind::InvariantViolation, where + "subset has fewer than 2 members");
      if (std::find(subset.begin(), subset.end(), q.target_id) == subset.end()) {
        throw Error(ErrorKind::SubsetMissingTarget, where + "subset does not contain target_id");
      }
      q.subset_ids = std::move(subset);
    }
    if (auto it = rec.find("exclude_reference"); it != rec.end()) {
      if (!it->is_boolean()) throw Error(ErrorKind::ParseError, where + "exclude_reference is not a bool");
      q.exclude_reference = it->get<bool>();
    }
    out.push_back(std::move(q));
  });
  return out;
}

void write_eval_queries(const std::vector<EvalQuery>& queries, const std::filesystem::path& path) {
  std::string out;
  for (const auto& q : queries) {
    json rec;
    rec["id"] = q.id;
    rec["reference_id"] = q.reference_id;
    rec["modification_text"] = q.modification_text;
    rec["target_id"] = q.target_id;
    if (q.subset_ids) rec["subset_ids"] = *q.subset_ids;
    if (q.exclude_reference) rec["exclude_reference"] = true;
    out += rec.dump();
    out += '\n';
  }
  write_file(path, out);
}

AssembledSet assemble_training_set(const EmbeddingTable& images, const EmbeddingTable& mods,
                                   const EmbeddingTable& targets, const EmbeddingTable& originals) {
  const std::size_t d = images.dim();
  if (mods.dim() != d || targets.dim() != d || originals.dim() != d) {
    throw Error(ErrorKind::DimMismatch, "training tables do not share one dim");
  }
  AssembledSet out;
  std::set<std::string> missing;
  auto note_missing = [&](const EmbeddingTable& t) {
    for (const auto& id : t.ids()) {
      if (!images.find(id) || !mods.find(id) || !targets.find(id) || !originals.find(id)) {
        missing.insert(id);
      }
    }
  };
  for (std::size_t i = 0; i < images.count(); ++i) {
    const std::string& id = images.ids()[i];
    auto m = mods.find(id);
    auto t = targets.find(id);
    auto o = originals.find(id);
    if (!m || !t || !o) continue;
    TrainingExample ex{id, l2_normalize(images.row(i)), l2_normalize(mods.row(*m)),
                       l2_normalize(targets.row(*t)), l2_normalize(originals.row(*o))};
    out.examples.push_back(std::move(ex));
  }
  for (const auto* t : {&images, &mods, &targets, &originals}) note_missing(*t);
  out.missing_ids.assign(missing.begin(), missing.end());
  if (out.examples.empty()) throw Error(ErrorKind::EmptyJoin, "no id is present in all four tables");
  return out;
}

}  // namespace scot
