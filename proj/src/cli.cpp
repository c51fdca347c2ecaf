#include "scot/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "scot/loss.hpp"
#include "scot/retrieval.hpp"
#include "scot/synthetic.hpp"
#include "scot/trainer.hpp"
#include "scot/triplet_forge.hpp"

namespace scot {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
  std::size_t threads = 1;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::IoError, "cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw Error(ErrorKind::IoError, "write failed for '" + path.string() + "'");
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t") == std::string::npos;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

// ---------------------------------------------------------------- ingest

EmbeddingTable parse_embedding_ndjson(const fs::path& path, const std::string& tag) {
  std::vector<std::string> ids;
  std::vector<float> values;
  std::size_t dim = 0;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (is_blank(line)) continue;
    std::string id;
    std::vector<double> emb;
    try {
      const auto rec = json::parse(line);
      id = rec.at("id").get<std::string>();
      emb = rec.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (ids.empty()) dim = emb.size();
    if (emb.size() != dim || dim == 0) {
      throw Error(ErrorKind::DimMismatch, path.string() + " line " + std::to_string(lineno) + ": expected dim " +
                                              std::to_string(dim) + ", got " + std::to_string(emb.size()));
    }
    ids.push_back(std::move(id));
    for (double x : emb) values.push_back(static_cast<float>(x));
  }
  if (ids.empty()) throw Error(ErrorKind::EmptyInput, "no embeddings in '" + path.string() + "'");
  const std::size_t n = ids.size();
  return EmbeddingTable(std::move(ids), Mat<float>(n, dim, std::move(values)), tag);
}

EmbeddingTable normalized(const EmbeddingTable& t) {
  Mat<float> m(t.count(), t.dim());
  for (std::size_t i = 0; i < t.count(); ++i) {
    try {
      m.set_row(i, l2_normalize(t.row(i)).span());
    } catch (const Error& e) {
      throw Error(e.kind(), "row '" + t.ids()[i] + "': " + e.detail());
    }
  }
  return EmbeddingTable(t.ids(), std::move(m), t.source_tag());
}

struct IngestOpts {
  std::vector<std::string> inputs;
  std::string out_dir;
  std::string out;
  std::string source_tag;
  bool normalize = false;
};

void cmd_ingest(const IngestOpts& o, std::ostream& out) {
  if (!o.out.empty() && o.inputs.size() != 1) {
    throw Error(ErrorKind::BadConfig, "--out needs exactly one input; use --out-dir for several");
  }
  if (o.out.empty() && o.out_dir.empty()) throw Error(ErrorKind::BadConfig, "one of --out or --out-dir is required");
  for (const auto& in : o.inputs) {
    const fs::path src(in);
    EmbeddingTable table;
    if (src.extension() == ".semb") {
      table = read_table(src);
      if (!o.source_tag.empty()) table = EmbeddingTable(table.ids(), table.matrix(), o.source_tag);
    } else {
      table = parse_embedding_ndjson(src, o.source_tag);
    }
    if (o.normalize) table = normalized(table);
    validate_rows(table);
    const fs::path dst = o.out.empty() ? fs::path(o.out_dir) / (src.stem().string() + ".semb") : fs::path(o.out);
    if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
    write_table(table, dst);
    out << "wrote " << dst.string() << " count=" << table.count() << " dim=" << table.dim() << "\n";
  }
}

// -------------------------------------------------------------- triplets

std::vector<std::pair<std::string, std::string>> load_corpus(const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> items;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (is_blank(line)) continue;
    std::string id, caption;
    if (line.front() == '{') {
      try {
        const auto rec = json::parse(line);
        id = rec.at("id").get<std::string>();
        caption = rec.at("caption").get<std::string>();
      } catch (const json::exception& e) {
        throw Error(ErrorKind::ParseError, path.string() + " line " + std::to_string(lineno) + ": " + e.what());
      }
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "c%06zu", items.size());
      id = buf;
      caption = line;
    }
    if (!seen.emplace(id, items.size()).second) throw Error(ErrorKind::DuplicateId, "duplicate id '" + id + "'");
    items.emplace_back(std::move(id), std::move(caption));
  }
  if (items.empty()) throw Error(ErrorKind::EmptyInput, "no captions in '" + path.string() + "'");
  return items;
}

struct TripletOpts {
  std::string corpus;
  std::string mode = "template";
  std::string out;
  std::string rejections;
  std::uint64_t seed = 0;
  std::size_t parallelism = 4;
  LlmEndpointConfig llm;
};

void cmd_triplets(const TripletOpts& o, std::ostream& out, std::ostream& err) {
  if (o.mode != "template" && o.mode != "llm") {
    throw Error(ErrorKind::BadConfig, "--mode must be template or llm");
  }
  LlmEndpointConfig llm = o.llm;
  if (o.mode == "llm") {
    if (const char* key = std::getenv("SCOT_LLM_API_KEY")) llm.api_key = key;
    validate_endpoint(llm);
  }
  const auto corpus = load_corpus(o.corpus);

  std::vector<TextTriplet> accepted;
  std::vector<std::pair<std::string, std::string>> rejected;  // id, reason
  auto consider = [&](const std::string& id, std::optional<TextTriplet> t, const std::string& error) {
    if (!t) {
      rejected.emplace_back(id, error);
      return;
    }
    if (auto reason = validate_triplet(*t)) {
      rejected.emplace_back(id, *reason);
      return;
    }
    accepted.push_back(std::move(*t));
  };

  if (o.mode == "template") {
    const auto rules = default_grammar();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      Rng rng = Rng::derive(o.seed, {i});
      try {
        consider(corpus[i].first, gen_template_triplet(corpus[i].second, rules, rng, corpus[i].first), {});
      } catch (const Error& e) {
        consider(corpus[i].first, std::nullopt, e.what());
      }
    }
  } else {
    auto transport = make_http_transport();
    const auto outcomes = llm_generate_many(corpus, llm, *transport, o.parallelism);
    for (std::size_t i = 0; i < corpus.size(); ++i) consider(corpus[i].first, outcomes[i].triplet, outcomes[i].error);
  }

  write_triplets(accepted, o.out);
  std::string log;
  for (const auto& [id, reason] : rejected) log += json{{"id", id}, {"reason", reason}}.dump() + "\n";
  if (!o.rejections.empty()) {
    write_text(o.rejections, log);
  } else {
    err << log;
  }
  out << "accepted=" << accepted.size() << " rejected=" << rejected.size() << "\n";
  if (accepted.empty()) throw Error(ErrorKind::EmptyDataset, "no triplet was accepted");
}

// ----------------------------------------------------------------- train

struct TrainOpts {
  std::string images, mods, targets, originals, image_targets;
  std::string out_dir;
  std::string resume;
  std::string target_source = "text";
  double dropout = 0.5;
  std::size_t proj_dim = 0;    // 0 = 4d
  std::size_t hidden_dim = 0;  // 0 = 8d
  bool wall_time = true;
  TrainConfig cfg;
};

std::vector<Vec<float>> align_targets(const EmbeddingTable& table, const std::vector<TrainingExample>& examples) {
  std::vector<Vec<float>> rows;
  rows.reserve(examples.size());
  for (const auto& ex : examples) rows.push_back(l2_normalize(table.row(ex.id)));
  return rows;
}

void cmd_train(TrainOpts o, const Common& common, std::ostream& out, std::ostream& err) {
  o.cfg.threads = common.threads;
  o.cfg.target_source = parse_target_source(o.target_source);
  if (o.cfg.target_source == TargetSource::Image && o.image_targets.empty()) {
    throw Error(ErrorKind::BadConfig, "target_source=image needs --image-targets");
  }
  validate(o.cfg);
  validate_dims({1, 1, 1}, o.dropout);

  const auto images = read_table(o.images);
  const auto assembled = assemble_training_set(images, read_table(o.mods), read_table(o.targets),
                                               read_table(o.originals));
  if (!assembled.missing_ids.empty()) {
    err << "note: " << assembled.missing_ids.size() << " ids missing from at least one table were skipped\n";
  }
  const auto& examples = assembled.examples;
  const std::size_t d = images.dim();

  std::vector<Vec<float>> image_targets;
  if (o.cfg.target_source == TargetSource::Image) {
    const auto table = read_table(o.image_targets);
    if (table.dim() != d) throw Error(ErrorKind::DimMismatch, "image-target table has a different dim");
    image_targets = align_targets(table, examples);
  }

  TrainState state;
  const fs::path dir(o.out_dir);
  const fs::path metrics = dir / "metrics.ndjson";
  if (!o.resume.empty()) {
    state = load_train_state(o.resume);
    if (state.params.dims.d != d) {
      throw Error(ErrorKind::ShapeMismatch, "checkpoint dim " + std::to_string(state.params.dims.d) +
                                                " does not match data dim " + std::to_string(d));
    }
  } else {
    CombinerDims dims = default_dims(d);
    if (o.proj_dim) dims.p = o.proj_dim;
    if (o.hidden_dim) dims.h = o.hidden_dim;
    state = fresh_state(init_params<float>(dims, o.dropout, o.cfg.seed));
    fs::create_directories(dir);
    std::ofstream(metrics, std::ios::trunc);
  }

  TrainIo io;
  io.checkpoint_dir = dir;
  io.metrics_log = metrics;
  io.log = [&err](const std::string& s) { err << s << "\n"; };
  io.zero_wall_time = !o.wall_time;
  const auto result = train(examples, o.cfg, std::move(state), image_targets, io);
  for (const auto& e : result.epochs) {
    out << "epoch=" << e.epoch << " batches=" << e.batches << " dropped=" << e.dropped
        << " L_pos=" << fmt(e.mean_pos) << " L_neg_prime=" << fmt(e.mean_neg_prime)
        << " L_caption_neg=" << fmt(e.mean_caption_neg) << " L_total=" << fmt(e.mean_total) << "\n";
  }
  out << "step=" << result.state.optimizer.step << " checkpoint="
      << checkpoint_path(dir, result.state.epochs_done).string() << "\n";
}

// ------------------------------------------------------------------ eval

struct EvalOpts {
  std::string gallery, queries, mods, references, checkpoint;
  std::vector<std::size_t> ks = {1, 5, 10, 50};
  std::vector<std::string> modes = {"scot"};
  std::string report, records, dump;
  bool exclude_reference = false;
};

void cmd_eval(const EvalOpts& o, const Common& common, std::ostream& out) {
  EvalOptions opts;
  opts.ks = o.ks;
  opts.modes.clear();
  for (const auto& m : o.modes) opts.modes.push_back(parse_query_mode(m));
  opts.exclude_reference = o.exclude_reference;
  opts.threads = common.threads;
  const bool needs_params =
      std::find(opts.modes.begin(), opts.modes.end(), QueryMode::Scot) != opts.modes.end();
  if (needs_params && o.checkpoint.empty()) throw Error(ErrorKind::BadConfig, "mode scot needs --checkpoint");

  const GalleryIndex gallery(read_table(o.gallery));
  const auto queries = load_eval_queries(o.queries);
  const auto mods = read_table(o.mods);
  std::optional<EmbeddingTable> refs;
  if (!o.references.empty()) refs = read_table(o.references);
  std::optional<CombinerParams<float>> params;
  if (needs_params) params = load_checkpoint(o.checkpoint, gallery.dim());

  const QueryInputs in{&gallery, refs ? &*refs : nullptr, &mods, &queries};
  const auto reports = evaluate(in, params ? &*params : nullptr, opts);
  const auto text = format_report(reports);
  out << text;
  if (!o.report.empty()) write_text(o.report, text);
  if (!o.records.empty()) write_text(o.records, format_report_records(reports));
  if (!o.dump.empty()) write_ranked_results(reports, o.dump);
}

// ---------------------------------------------------------------- search

struct SearchOpts {
  std::string checkpoint, gallery, references, reference_id, mods, mod_id, mod_vector;
  std::string mode = "scot";
  std::size_t k = 10;
  bool exclude_reference = false;
};

Vec<float> parse_vector(const std::string& text) {
  std::vector<float> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stof(item, &used));
      if (!is_blank(item.substr(used))) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::ParseError, "bad number '" + item + "' in --mod-vector");
    }
  }
  if (v.empty()) throw Error(ErrorKind::ParseError, "--mod-vector is empty");
  return l2_normalize(Vec<float>(std::move(v)));
}

void cmd_search(const SearchOpts& o, std::ostream& out) {
  const QueryMode mode = parse_query_mode(o.mode);
  if (mode == QueryMode::Scot && o.checkpoint.empty()) throw Error(ErrorKind::BadConfig, "mode scot needs --checkpoint");
  if (o.mod_vector.empty() == (o.mods.empty() || o.mod_id.empty())) {
    throw Error(ErrorKind::BadConfig, "give either --mods with --mod-id, or --mod-vector");
  }
  const GalleryIndex gallery(read_table(o.gallery));
  std::optional<EmbeddingTable> refs;
  if (!o.references.empty()) refs = read_table(o.references);
  const EmbeddingTable& ref_table = refs ? *refs : gallery.table();
  const Vec<float> image = l2_normalize(ref_table.row(o.reference_id));

  Vec<float> text;
  if (!o.mod_vector.empty()) {
    text = parse_vector(o.mod_vector);
  } else {
    const auto mods = read_table(o.mods);
    text = l2_normalize(mods.row(o.mod_id));
  }
  if (text.dim() != gallery.dim()) throw Error(ErrorKind::DimMismatch, "modification embedding has a different dim");

  Vec<float> query;
  if (mode == QueryMode::Scot) {
    const auto params = load_checkpoint(o.checkpoint, gallery.dim());
    auto cq = compose_query(params, image.span(), text.span());
    out << "s=" << fmt(cq.s) << "\n";
    query = std::move(cq.vector);
  } else {
    query = baseline_query(mode, image.span(), text.span());
  }
  std::optional<std::string> excluded;
  if (o.exclude_reference) excluded = o.reference_id;
  const auto r = search(gallery, query.span(), o.k, o.reference_id, excluded);
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    out << (i + 1) << " " << r.ids[i] << " " << fmt(r.scores[i]) << "\n";
  }
}

// ----------------------------------------------------------------- probe

struct ProbeOpts {
  std::string images, texts;
  double kappa = 0.07;
};

void cmd_probe(const ProbeOpts& o, std::ostream& out) {
  const auto images = read_table(o.images);
  const auto texts = read_table(o.texts);
  if (images.dim() != texts.dim()) throw Error(ErrorKind::DimMismatch, "image and text tables differ in dim");
  Mat<double> a(images.count(), images.dim()), b(images.count(), images.dim());
  for (std::size_t i = 0; i < images.count(); ++i) {
    const auto ti = texts.row(images.ids()[i]);
    for (std::size_t j = 0; j < images.dim(); ++j) {
      a(i, j) = images.row(i)[j];
      b(i, j) = ti[j];
    }
  }
  out << "clip_i2t=" << fmt(clip_i2t_loss<double>(a, b, o.kappa)) << "\n";
}

// ----------------------------------------------------------------- synth

struct SynthOpts {
  std::string out_dir;
  std::size_t concepts = 16, dim = 32;
  double sigma_img = 0.05, sigma_txt = 0.05;
  std::uint64_t world_seed = 7;
  SyntheticConfig data{2000, 200, 200, 11, 0.0, 6};
};

void cmd_synth(const SynthOpts& o, std::ostream& out) {
  const auto world = gen_world(o.concepts, o.dim, o.sigma_img, o.sigma_txt, o.world_seed);
  const auto files = write_synthetic(gen_dataset(world, o.data), o.out_dir);
  for (const auto& p : {files.train_images, files.train_mods, files.train_targets, files.train_originals,
                        files.train_image_targets, files.gallery, files.references, files.eval_mods,
                        files.eval_queries, files.triplets}) {
    out << "wrote " << p.string() << "\n";
  }
}

void report_error(std::ostream& err, std::string_view kind, int code, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  err << "error: kind=" << kind << " code=" << code << " message=" << flat << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"SCOT composition training and retrieval toolkit", "scot"};
  app.set_config("--config", "", "Flat key-value (INI) configuration file; flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--threads", common.threads, "Worker threads; 1 gives bit-reproducible runs")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  IngestOpts ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Convert NDJSON embeddings ({id, embedding}) to SEMB");
  c_ingest->add_option("inputs", ingest.inputs, "Input .ndjson or .semb files")->required();
  c_ingest->add_option("--out", ingest.out, "Output file (single input only)");
  c_ingest->add_option("--out-dir", ingest.out_dir, "Output directory; files keep their stem");
  c_ingest->add_option("--source-tag", ingest.source_tag, "Encoder name recorded in the table");
  c_ingest->add_flag("--normalize", ingest.normalize, "L2-normalize rows before validation");

  TripletOpts trip;
  auto* c_trip = app.add_subcommand("triplets", "Generate (caption, modification, modified caption) triplets");
  c_trip->add_option("--corpus", trip.corpus, "Caption lines or NDJSON {id, caption}")->required();
  c_trip->add_option("--mode", trip.mode, "template or llm")->capture_default_str();
  c_trip->add_option("--out", trip.out, "Triplet NDJSON output")->required();
  c_trip->add_option("--rejections", trip.rejections, "Rejection log (NDJSON); stderr when unset");
  c_trip->add_option("--seed", trip.seed)->capture_default_str();
  c_trip->add_option("--parallelism", trip.parallelism, "Concurrent LLM requests")->capture_default_str();
  c_trip->add_option("--llm-url", trip.llm.base_url);
  c_trip->add_option("--llm-model", trip.llm.model_name);
  c_trip->add_option("--llm-prompt", trip.llm.prompt_template)->capture_default_str();
  c_trip->add_option("--llm-timeout", trip.llm.timeout_s)->capture_default_str();
  c_trip->add_option("--llm-retries", trip.llm.max_retries)->capture_default_str();
  c_trip->add_option("--llm-temperature", trip.llm.temperature)->capture_default_str();

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Train the Combiner on assembled embedding tables");
  c_train->add_option("--images", tr.images, "Reference image embeddings (SEMB)")->required();
  c_train->add_option("--mods", tr.mods, "Modification-text embeddings")->required();
  c_train->add_option("--targets", tr.targets, "Modified-caption embeddings")->required();
  c_train->add_option("--originals", tr.originals, "Original-caption embeddings")->required();
  c_train->add_option("--image-targets", tr.image_targets, "Target-image embeddings for target_source=image");
  c_train->add_option("--out-dir", tr.out_dir, "Checkpoints, metrics log and config snapshot")->required();
  c_train->add_option("--resume", tr.resume, "Continue from epoch_{k}.ckpt (needs its .opt sibling)");
  c_train->add_option("--target-source", tr.target_source, "text or image")->capture_default_str();
  c_train->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str();
  c_train->add_option("--lr", tr.cfg.learning_rate)->capture_default_str();
  c_train->add_option("--epochs", tr.cfg.epochs, "Total epochs, including resumed ones")->capture_default_str();
  c_train->add_option("--seed", tr.cfg.seed)->capture_default_str();
  c_train->add_option("--min-batch", tr.cfg.min_batch)->capture_default_str();
  c_train->add_option("--margin", tr.cfg.loss.margin)->capture_default_str();
  c_train->add_option("--alpha-pos", tr.cfg.loss.alpha_pos)->capture_default_str();
  c_train->add_option("--alpha-neg", tr.cfg.loss.alpha_neg)->capture_default_str();
  c_train->add_flag("--exclude-diagonal", tr.cfg.loss.exclude_diagonal, "Drop i=j terms from L'_neg");
  c_train->add_option("--beta1", tr.cfg.adamw.beta1)->capture_default_str();
  c_train->add_option("--beta2", tr.cfg.adamw.beta2)->capture_default_str();
  c_train->add_option("--eps", tr.cfg.adamw.eps)->capture_default_str();
  c_train->add_option("--weight-decay", tr.cfg.adamw.weight_decay)->capture_default_str();
  c_train->add_option("--dropout", tr.dropout)->capture_default_str();
  c_train->add_option("--proj-dim", tr.proj_dim, "0 means 4d")->capture_default_str();
  c_train->add_option("--hidden-dim", tr.hidden_dim, "0 means 8d")->capture_default_str();
  c_train->add_flag("!--no-wall-time", tr.wall_time, "Log wall_ms as 0 so logs are byte-reproducible");

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "Recall@K evaluation of composed and baseline queries");
  c_eval->add_option("--gallery", ev.gallery)->required();
  c_eval->add_option("--queries", ev.queries, "Eval query NDJSON")->required();
  c_eval->add_option("--mods", ev.mods, "Modification embeddings keyed by query id")->required();
  c_eval->add_option("--references", ev.references, "Reference image table; the gallery when unset");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Required for mode scot");
  c_eval->add_option("--ks", ev.ks)->delimiter(',')->capture_default_str();
  c_eval->add_option("--modes", ev.modes, "scot,image_only,text_only,image_plus_text")
      ->delimiter(',')
      ->capture_default_str();
  c_eval->add_option("--report", ev.report, "Also write the metric=K=value report here");
  c_eval->add_option("--records", ev.records, "Metric records as NDJSON");
  c_eval->add_option("--dump", ev.dump, "Ranked results as NDJSON");
  c_eval->add_flag("--exclude-reference", ev.exclude_reference);

  SearchOpts so;
  auto* c_search = app.add_subcommand("search", "Ranked gallery ids for one composed query");
  c_search->add_option("--checkpoint", so.checkpoint);
  c_search->add_option("--gallery", so.gallery)->required();
  c_search->add_option("--references", so.references, "Reference image table; the gallery when unset");
  c_search->add_option("--reference-id", so.reference_id)->required();
  c_search->add_option("--mods", so.mods, "Modification embedding table");
  c_search->add_option("--mod-id", so.mod_id, "Row of --mods to use");
  c_search->add_option("--mod-vector", so.mod_vector, "Comma-separated modification embedding");
  c_search->add_option("--mode", so.mode)->capture_default_str();
  c_search->add_option("-k,--k", so.k)->capture_default_str();
  c_search->add_flag("--exclude-reference", so.exclude_reference);

  ProbeOpts pr;
  auto* c_probe = app.add_subcommand("probe", "Image-to-text contrastive loss of paired tables");
  c_probe->add_option("--images", pr.images)->required();
  c_probe->add_option("--texts", pr.texts, "Text table with the same ids")->required();
  c_probe->add_option("--kappa", pr.kappa)->capture_default_str();

  SynthOpts sy;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic concept-world dataset");
  c_synth->add_option("--out-dir", sy.out_dir)->required();
  c_synth->add_option("--concepts", sy.concepts)->capture_default_str();
  c_synth->add_option("--dim", sy.dim)->capture_default_str();
  c_synth->add_option("--sigma-img", sy.sigma_img)->capture_default_str();
  c_synth->add_option("--sigma-txt", sy.sigma_txt)->capture_default_str();
  c_synth->add_option("--world-seed", sy.world_seed)->capture_default_str();
  c_synth->add_option("--seed", sy.data.seed)->capture_default_str();
  c_synth->add_option("--n-train", sy.data.n_train)->capture_default_str();
  c_synth->add_option("--n-eval", sy.data.n_eval)->capture_default_str();
  c_synth->add_option("--gallery-size", sy.data.gallery_size)->capture_default_str();
  c_synth->add_option("--rho", sy.data.rho)->capture_default_str();
  c_synth->add_option("--subset-size", sy.data.subset_size)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "BadConfig", 2, e.what());
    return 2;
  }

  // Resolved configuration, written next to the command's outputs.
  auto snapshot = [&](const fs::path& dir, const std::string& name) {
    if (dir.empty()) return;
    // Keep root options and those of the command that ran.
    std::istringstream all(app.config_to_str(true, false));
    std::string kept, line;
    while (std::getline(all, line)) {
      const auto key = line.substr(0, line.find('='));
      if (key.find('.') == std::string::npos || key.starts_with(name + ".")) kept += line + "\n";
    }
    write_text(dir / (name + ".config.ini"), kept);
  };
  auto parent_of = [](const std::string& p) { return fs::path(p).parent_path(); };

  try {
    if (*c_ingest) {
      cmd_ingest(ingest, out);
      snapshot(ingest.out.empty() ? fs::path(ingest.out_dir) : parent_of(ingest.out), "ingest");
    } else if (*c_trip) {
      snapshot(parent_of(trip.out), "triplets");
      cmd_triplets(trip, out, err);
    } else if (*c_train) {
      cmd_train(tr, common, out, err);
      snapshot(tr.out_dir, "train");
    } else if (*c_eval) {
      cmd_eval(ev, common, out);
      if (!ev.report.empty()) snapshot(parent_of(ev.report), "eval");
    } else if (*c_search) {
      cmd_search(so, out);
    } else if (*c_probe) {
      cmd_probe(pr, out);
    } else if (*c_synth) {
      cmd_synth(sy, out);
      snapshot(sy.out_dir, "synth");
    }
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    report_error(err, to_string(e.kind()), code, e.detail());
    return code;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "IoError", 3, e.what());
    return 3;
  } catch (const std::exception& e) {
    report_error(err, "Unexpected", 3, e.what());
    return 3;
  }
  return 0;
}

}  // namespace scot
