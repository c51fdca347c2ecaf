// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: scot_acceptance --scot <cli> --property-tests <binary> --work-dir <dir>
//                        [--only 1,2,...] [--known-fail 3]
// Exit status is 0 when every failing criterion is listed in --known-fail.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "cli_runner.hpp"
#include "oracles.hpp"
#include "scot/synthetic.hpp"
#include "scot/trainer.hpp"

using namespace scot;
using namespace scot::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  std::string scot;
  std::string property_tests;
  fs::path work;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << x;
  return os.str();
}

std::string sci(double x) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << x;
  return os.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

/// Runs a shell command with output captured to log; returns the exit status.
int shell(const std::string& cmd, const fs::path& log) {
  const int raw = std::system((cmd + " > " + quote(log.string()) + " 2>&1").c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

// ----------------------------------------------------------- criterion 1

Outcome loss_oracle() {
  const auto t0 = Clock::now();
  const std::size_t ns[] = {1, 2, 4, 8, 16};
  const std::size_t ds[] = {4, 16, 64};
  double worst = 0;
  for (int b = 0; b < 200; ++b) {
    Rng rng = Rng::derive(1001, {static_cast<std::uint64_t>(b)});
    const std::size_t n = ns[rng.bounded(5)], d = ds[rng.bounded(3)];
    auto vc = random_unit_rows<double>(rng, n, d);
    const auto tu = random_unit_rows<double>(rng, n, d);
    const auto t = random_unit_rows<double>(rng, n, d);
    // Pull composed rows toward random targets so both gate branches occur.
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.bounded(static_cast<std::uint32_t>(n));
      const double w = rng.uniform(0, 1.5);
      for (std::size_t k = 0; k < d; ++k) vc(i, k) += w * tu(j, k);
      vc.set_row(i, l2_normalize(std::span<const double>(vc.row(i))).span());
    }
    LossConfig cfg;
    const auto r = total_loss(vc, tu, t, cfg);
    const auto o = naive_loss(vc, tu, t, cfg.margin, cfg.alpha_pos, cfg.alpha_neg);
    for (auto [a, e] : {std::pair{r.pos, o.pos}, {r.neg_prime, o.neg_prime}, {r.neg_doubleprime, o.neg_doubleprime},
                        {r.total, o.total}}) {
      worst = std::max(worst, rel_err(a, e));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 30,
          "200 batches, max rel err " + sci(worst) + ", " + fmt(secs, 2) + " s"};
}

// ----------------------------------------------------------- criterion 2

double combiner_check(Rng& rng, bool& excluded) {
  const CombinerDims dims{2 + rng.bounded(7), 2 + rng.bounded(15), 2 + rng.bounded(15)};
  auto p = random_params<double>(dims, 0.0, rng, rng.uniform(0.3, 1.5));
  auto v = random_unit<double>(rng, dims.d), t = random_unit<double>(rng, dims.d);
  const auto r = random_unit<double>(rng, dims.d);
  const auto base = forward<double>(p, v, t, Mode::Eval);
  excluded = relu_clearance(base.cache) < 1e-4;
  if (excluded) return 0;
  auto f = [&] { return dot<double>(forward<double>(p, v, t, Mode::Eval).composed.span(), r.span()); };
  const auto g = backward<double>(p, base.cache, r);
  double worst = 0;
  auto views = p.w.views();
  const auto gv = g.params.views();
  for (std::size_t k = 0; k < views.size(); ++k) {
    worst = std::max(worst, vector_rel_err({gv[k].begin(), gv[k].end()}, central_diff(views[k], f)));
  }
  worst = std::max(worst, vector_rel_err(g.image.values(), central_diff(v.span(), f)));
  worst = std::max(worst, vector_rel_err(g.text.values(), central_diff(t.span(), f)));
  return worst;
}

double loss_check(Rng& rng, bool& excluded) {
  const std::size_t n = 1 + rng.bounded(8), d = 2 + rng.bounded(15);
  auto vc = random_unit_rows<double>(rng, n, d);
  const auto tu = random_unit_rows<double>(rng, n, d);
  const auto t = random_unit_rows<double>(rng, n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) vc(i, k) += 0.7 * tu(i, k);
  }
  LossConfig cfg;
  excluded = gate_clearance(vc, tu, t, cfg.margin) < 1e-4;
  if (excluded) return 0;
  const auto r = total_loss(vc, tu, t, cfg);
  const auto numeric = central_diff(vc.span(), [&] { return total_loss(vc, tu, t, cfg).total; });
  return vector_rel_err({r.grad.span().begin(), r.grad.span().end()}, numeric);
}

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  double worst_c = 0, worst_l = 0;
  int skipped = 0;
  for (int which = 0; which < 2; ++which) {
    int done = 0;
    for (std::uint64_t i = 0; done < 50; ++i) {
      Rng rng = Rng::derive(2002 + which, {i});
      bool excluded = false;
      const double e = which == 0 ? combiner_check(rng, excluded) : loss_check(rng, excluded);
      if (excluded) {
        ++skipped;
        continue;
      }
      (which == 0 ? worst_c : worst_l) = std::max(which == 0 ? worst_c : worst_l, e);
      ++done;
    }
  }
  const double secs = seconds_since(t0);
  return {worst_c <= 1e-5 && worst_l <= 1e-5 && secs < 120,
          "50+50 configs, combiner max rel err " + sci(worst_c) + ", loss max rel err " +
              sci(worst_l) + ", " + std::to_string(skipped) + " near-kink configs resampled, " +
              fmt(secs, 2) + " s"};
}

// ------------------------------------------------------- criteria 3, 4, 7

std::map<std::string, double> read_report(const fs::path& path) {
  std::map<std::string, double> m;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.rfind('=');
    if (eq == std::string::npos) continue;
    m[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
  }
  return m;
}

struct EndToEnd {
  bool ran = false;
  std::string error;
  double seconds = 0;
  std::map<std::string, double> report;
};

/// synth, train (30 epochs, batch 64, one thread) and eval through the CLI.
EndToEnd run_end_to_end(const Settings& s, const fs::path& dir, bool with_eval) {
  EndToEnd e;
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  const auto data = dir / "data";
  const auto run = dir / "run";
  const std::string cli = quote(s.scot) + " --threads 1 ";
  auto f = [&](const char* name) { return quote((data / name).string()); };
  if (shell(cli + "synth --out-dir " + quote(data.string()) +
                " --concepts 16 --dim 32 --sigma-img 0.05 --sigma-txt 0.05 --n-train 2000 --n-eval 200"
                " --gallery-size 200",
            dir / "synth.log") != 0) {
    e.error = "synth failed, see " + (dir / "synth.log").string();
    return e;
  }
  if (shell(cli + "train --images " + f("train_images.semb") + " --mods " + f("train_mods.semb") + " --targets " +
                f("train_targets.semb") + " --originals " + f("train_originals.semb") + " --out-dir " +
                quote(run.string()) + " --batch-size 64 --epochs 30 --no-wall-time",
            dir / "train.log") != 0) {
    e.error = "train failed, see " + (dir / "train.log").string();
    return e;
  }
  if (with_eval) {
    if (shell(cli + "eval --gallery " + f("gallery.semb") + " --queries " + f("eval_queries.ndjson") + " --mods " +
                  f("eval_mods.semb") + " --references " + f("references.semb") + " --checkpoint " +
                  quote((run / "epoch_30.ckpt").string()) +
                  " --modes scot,image_plus_text,image_only,text_only --ks 1,5,10,50 --report " +
                  quote((dir / "report.txt").string()),
              dir / "eval.log") != 0) {
      e.error = "eval failed, see " + (dir / "eval.log").string();
      return e;
    }
    e.report = read_report(dir / "report.txt");
  }
  e.seconds = seconds_since(t0);
  e.ran = true;
  return e;
}

Outcome synthetic_end_to_end(const EndToEnd& e) {
  if (!e.ran) return {false, e.error};
  const double r1 = e.report.at("scot.recall=1"), r5 = e.report.at("scot.recall=5");
  return {r1 >= 0.90 && r5 >= 0.98 && e.seconds < 180,
          "R@1 " + fmt(r1) + " (need >= 0.90), R@5 " + fmt(r5) + " (need >= 0.98), R@10 " +
              fmt(e.report.at("scot.recall=10")) + ", " + fmt(e.seconds, 1) + " s"};
}

Outcome baseline_ordering(const EndToEnd& e) {
  if (!e.ran) return {false, e.error};
  const double scot = e.report.at("scot.recall=1");
  const double sum = e.report.at("image_plus_text.recall=1");
  const double img = e.report.at("image_only.recall=1");
  return {scot > sum && sum > img, "R@1 scot " + fmt(scot) + " > image_plus_text " + fmt(sum) + " > image_only " +
                                       fmt(img) + " (text_only " + fmt(e.report.at("text_only.recall=1")) + ")"};
}

Outcome determinism(const Settings& s, const EndToEnd& first) {
  if (!first.ran) return {false, first.error};
  const auto second = run_end_to_end(s, s.work / "c7_repeat", false);
  if (!second.ran) return {false, second.error};
  const auto a = snapshot_tree(s.work / "c3" / "run");
  const auto b = snapshot_tree(s.work / "c7_repeat" / "run");
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : a) {
    if (name.ends_with(".config.ini")) continue;  // records the output directory
    ++compared;
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) differing.push_back(name);
  }
  const bool metrics = a.count("metrics.ndjson") && a.count("epoch_30.ckpt");
  std::string detail = std::to_string(compared) + " files (30 checkpoints, 30 optimizer states, metrics log) compared";
  if (!differing.empty()) detail += ", differing: " + differing.front();
  return {metrics && differing.empty() && a.size() == b.size(), detail};
}

// ----------------------------------------------------------- criterion 5

double ablation_r1(std::uint64_t seed, TargetSource source, std::size_t threads) {
  const auto world = gen_world(16, 32, 0.05, 0.05, seed);
  SyntheticConfig sc;
  sc.n_train = 2000;
  sc.n_eval = 200;
  sc.gallery_size = 200;
  sc.seed = seed + 4;
  sc.rho = 0.3;
  const auto data = gen_dataset(world, sc);
  const auto set = assemble_training_set(data.train_images, data.train_mods, data.train_targets,
                                         data.train_originals);
  std::vector<Vec<float>> image_targets;
  for (const auto& ex : set.examples) image_targets.emplace_back(data.train_image_targets.row(ex.id));
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.epochs = 30;
  cfg.target_source = source;
  cfg.threads = threads;
  const auto result = train(set.examples, cfg, fresh_state(init_params<float>(default_dims(32), 0.5, cfg.seed)),
                            image_targets);
  const GalleryIndex index(data.gallery);
  QueryInputs in{&index, &data.references, &data.eval_mods, &data.queries};
  EvalOptions opts;
  opts.ks = {1};
  return evaluate(in, &result.state.params, opts).at(0).recall.at(1);
}

Outcome supervision_ablation() {
  // One thread, so the numbers do not depend on the machine's core count.
  const std::size_t threads = 1;
  double text = 0, image = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double t = ablation_r1(seed, TargetSource::Text, threads);
    const double i = ablation_r1(seed, TargetSource::Image, threads);
    text += t / 5;
    image += i / 5;
    per_seed += (seed > 1 ? ", " : "") + fmt(t - i, 3);
  }
  return {text - image >= 0.05, "mean R@1 over 5 worlds: text " + fmt(text) + " vs image " + fmt(image) +
                                    " (gap " + fmt(text - image) + ", need >= 0.05; per-world gaps " + per_seed +
                                    ")"};
}

// ----------------------------------------------------------- criterion 6

Outcome retrieval_oracle() {
  const auto t0 = Clock::now();
  std::size_t mismatches = 0;
  for (std::uint64_t inst = 0; inst < 100; ++inst) {
    Rng rng = Rng::derive(6006, {inst});
    const std::size_t n = 6 + rng.bounded(995), d = 2 + rng.bounded(31), nq = 1 + rng.bounded(20);
    const auto table = random_table(rng, n, d, "g");
    const GalleryIndex index(table);
    const auto rows = all_rows(table);
    std::vector<RankedResult> results;
    std::vector<std::vector<std::string>> oracle_rankings, oracle_subset_rankings;
    std::vector<std::string> targets;
    std::unordered_map<std::string, std::string> gt;
    std::vector<EvalQuery> queries;
    std::vector<ComposedQuery> qv;
    const std::size_t kmax = 1 + rng.bounded(static_cast<std::uint32_t>(std::min<std::size_t>(n, 60)));
    for (std::size_t q = 0; q < nq; ++q) {
      const auto qid = numbered_id("q", q);
      const auto vec = random_unit<float>(rng, d);
      const auto oracle = brute_force_rank(table, vec, rows);
      const auto r = search(index, vec, kmax, qid);
      mismatches += !matches_prefix(r, oracle, kmax);
      results.push_back(r);
      std::vector<std::string> ids;
      for (const auto& [score, id] : oracle) ids.push_back(id);
      oracle_rankings.push_back(ids);

      // Subset of six distinct rows containing the target.
      std::vector<std::size_t> pickrows = rows;
      for (std::size_t k = n; k > 1; --k) std::swap(pickrows[k - 1], pickrows[rng.bounded(static_cast<std::uint32_t>(k))]);
      pickrows.resize(6);
      EvalQuery eq;
      eq.id = qid;
      eq.target_id = table.ids()[pickrows[rng.bounded(6)]];
      eq.subset_ids = std::vector<std::string>();
      for (auto r6 : pickrows) eq.subset_ids->push_back(table.ids()[r6]);
      const auto sub_oracle = brute_force_rank(table, vec, pickrows);
      std::vector<std::string> sub_ids;
      for (const auto& [score, id] : sub_oracle) sub_ids.push_back(id);
      oracle_subset_rankings.push_back(sub_ids);
      mismatches += !matches_prefix(rank_subset(index, vec, *eq.subset_ids, qid), sub_oracle, 6);
      queries.push_back(eq);
      qv.push_back({vec, 0});
      targets.push_back(eq.target_id);
      gt[qid] = eq.target_id;
    }
    for (std::size_t k = 1; k <= kmax; ++k) {
      mismatches += recall_at_k(results, gt, k) != oracle_recall(oracle_rankings, targets, k);
    }
    for (std::size_t k = 1; k <= 6; ++k) {
      mismatches += recall_subset_at_k(index, qv, queries, k) != oracle_recall(oracle_subset_rankings, targets, k);
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30,
          "100 instances, " + std::to_string(mismatches) + " mismatches, " + fmt(secs, 2) + " s"};
}

// ----------------------------------------------------------- criterion 8

Outcome format_round_trips(const Settings& s) {
  const auto dir = s.work / "c8";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::size_t failures = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng rng = Rng::derive(8008, {i});
    const auto table = random_table(rng, 1 + rng.bounded(300), 1 + rng.bounded(128), "row", "enc" + std::to_string(i));
    const auto path = dir / ("t" + std::to_string(i) + ".semb");
    write_table(table, path);
    const auto back = read_table(path);
    failures += !(back == table) || slurp(path) != encode_semb(back);

    const CombinerDims dims{1 + rng.bounded(64), 1 + rng.bounded(128), 1 + rng.bounded(256)};
    const auto params = init_params<float>(dims, rng.uniform(0, 0.9), rng.next_u32());
    const auto cpath = dir / ("p" + std::to_string(i) + ".ckpt");
    save_checkpoint(params, cpath);
    const auto cback = load_checkpoint(cpath);
    failures += !cback.same_values(params) || slurp(cpath) != encode_checkpoint(cback);
  }
  return {failures == 0, "50 tables + 50 parameter sets, " + std::to_string(failures) + " mismatches"};
}

// ----------------------------------------------------------- criterion 9

Outcome invariant_suite(const Settings& s) {
  const auto log = s.work / "property.log";
  const int code = shell(quote(s.property_tests), log);
  std::ifstream in(log);
  std::string summary;
  for (std::string line; std::getline(in, line);) {
    if (line.find("test cases:") != std::string::npos) summary = line.substr(line.find("test cases:"));
  }
  return {code == 0, summary.empty() ? "property binary exited " + std::to_string(code) : summary};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  Settings s;
  std::string work = (fs::temp_directory_path() / "scot_acceptance").string();
  std::vector<int> only, known_fail;
  app.add_option("--scot", s.scot, "Path to the scot CLI")->required();
  app.add_option("--property-tests", s.property_tests, "Path to the property test binary")->required();
  app.add_option("--work-dir", work);
  app.add_option("--only", only)->delimiter(',');
  app.add_option("--known-fail", known_fail, "Criteria documented as unattainable")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  s.work = work;
  fs::create_directories(s.work);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int c) { return selected.empty() || selected.count(c); };

  EndToEnd e2e;
  if (wanted(3) || wanted(4) || wanted(7)) e2e = run_end_to_end(s, s.work / "c3", true);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, loss_oracle},
      {2, gradient_checks},
      {3, [&] { return synthetic_end_to_end(e2e); }},
      {4, [&] { return baseline_ordering(e2e); }},
      {5, supervision_ablation},
      {6, retrieval_oracle},
      {7, [&] { return determinism(s, e2e); }},
      {8, [&] { return format_round_trips(s); }},
      {9, [&] { return invariant_suite(s); }},
  };
  const std::set<int> known(known_fail.begin(), known_fail.end());
  int unexpected = 0;
  for (const auto& [id, fn] : criteria) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::string tag = o.pass ? "PASS" : "FAIL";
    if (!o.pass && known.count(id)) tag += " (known)";
    std::cout << "criterion " << id << ": " << tag << " - " << o.detail << std::endl;
    if (!o.pass && !known.count(id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
