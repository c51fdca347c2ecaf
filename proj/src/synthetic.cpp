#include "scot/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace scot {

ConceptWorld gen_world(std::size_t concepts, std::size_t dim, double sigma_img, double sigma_txt,
                       std::uint64_t seed) {
  if (concepts == 0 || dim == 0 || concepts > dim) {
    throw Error(ErrorKind::BadDims, "need 0 < concepts <= dim");
  }
  for (double s : {sigma_img, sigma_txt}) {
    if (!(s >= 0.0 && s < 0.5)) throw Error(ErrorKind::BadRange, "noise sigma must be in [0, 0.5)");
  }
  ConceptWorld w{concepts, dim, Mat<double>(concepts, dim), sigma_img, sigma_txt, seed};
  Rng rng = Rng::derive(seed, {0});
  for (double& x : w.basis.span()) x = rng.normal();
  // Modified Gram-Schmidt, applied twice for orthogonality to working precision.
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < concepts; ++i) {
      auto ri = w.basis.row(i);
      for (std::size_t j = 0; j < i; ++j) {
        auto rj = w.basis.row(j);
        const double proj = dot<double>(ri, rj);
        for (std::size_t c = 0; c < dim; ++c) ri[c] -= proj * rj[c];
      }
      const double n = norm2<double>(ri);
      for (double& x : ri) x /= n;
    }
  }
  return w;
}

namespace {

Vec<float> noisy_direction(std::span<const double> direction, double sigma, Rng& rng) {
  const std::size_t d = direction.size();
  const double scale = sigma / std::sqrt(static_cast<double>(d));
  Vec<double> v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = direction[i] + scale * rng.normal();
  return cast<float>(l2_normalize(v));
}

std::string make_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%06zu", prefix, i);
  return buf;
}

std::string concept_name(std::size_t c) { return "c" + std::to_string(c); }

// Draws a != b.
std::pair<std::uint32_t, std::uint32_t> draw_pair(Rng& rng, std::size_t concepts) {
  const auto a = rng.bounded(static_cast<std::uint32_t>(concepts));
  auto b = rng.bounded(static_cast<std::uint32_t>(concepts - 1));
  if (b >= a) ++b;
  return {a, b};
}

class TableBuilder {
 public:
  TableBuilder(std::size_t rows, std::size_t dim, std::string tag) : matrix_(rows, dim), tag_(std::move(tag)) {
    ids_.reserve(rows);
  }
  void add(std::string id, const Vec<float>& v) {
    matrix_.set_row(ids_.size(), v.span());
    ids_.push_back(std::move(id));
  }
  EmbeddingTable build() { return EmbeddingTable(std::move(ids_), std::move(matrix_), tag_); }

 private:
  std::vector<std::string> ids_;
  Mat<float> matrix_;
  std::string tag_;
};

}  // namespace

Vec<float> noisy_concept(const ConceptWorld& world, std::size_t concept_index, double sigma, Rng& rng) {
  return noisy_direction(world.basis.row(concept_index), sigma, rng);
}

SyntheticData gen_dataset(const ConceptWorld& world, const SyntheticConfig& cfg) {
  const std::size_t C = world.concepts;
  const std::size_t d = world.dim;
  if (cfg.n_train == 0 || cfg.n_eval == 0 || cfg.gallery_size == 0) {
    throw Error(ErrorKind::BadSizes, "n_train, n_eval and gallery_size must be positive");
  }
  if (C < 2) throw Error(ErrorKind::BadSizes, "need at least two concepts");
  if (cfg.gallery_size < C) throw Error(ErrorKind::BadSizes, "gallery must hold at least one item per concept");
  if (cfg.subset_size == 1 || cfg.subset_size > cfg.gallery_size) {
    throw Error(ErrorKind::BadSizes, "subset_size must be 0 or in [2, gallery_size]");
  }
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) throw Error(ErrorKind::BadRange, "rho must be in [0, 1]");

  SyntheticData out;
  const std::string img_tag = "synthetic-image";
  const std::string txt_tag = "synthetic-text";

  auto difference = [&](std::size_t a, std::size_t b) {
    std::vector<double> diff(d);
    for (std::size_t i = 0; i < d; ++i) diff[i] = world.basis(b, i) - world.basis(a, i);
    return diff;
  };

  // Gallery
  {
    Rng rng = Rng::derive(cfg.seed, {1});
    TableBuilder gb(cfg.gallery_size, d, img_tag);
    for (std::size_t k = 0; k < cfg.gallery_size; ++k) {
      const auto c = static_cast<std::uint32_t>(k % C);
      gb.add(make_id('g', k), noisy_concept(world, c, world.sigma_img, rng));
      out.gallery_concept.push_back(c);
    }
    out.gallery = gb.build();
  }

  // Training examples and triplets
  {
    Rng rng = Rng::derive(cfg.seed, {2});
    Rng corrupt = Rng::derive(cfg.seed, {4});
    TableBuilder images(cfg.n_train, d, img_tag), mods(cfg.n_train, d, txt_tag), targets(cfg.n_train, d, txt_tag),
        originals(cfg.n_train, d, txt_tag), image_targets(cfg.n_train, d, img_tag);
    for (std::size_t i = 0; i < cfg.n_train; ++i) {
      const auto [a, b] = draw_pair(rng, C);
      const std::string id = make_id('t', i);
      images.add(id, noisy_concept(world, a, world.sigma_img, rng));
      mods.add(id, noisy_direction(difference(a, b), world.sigma_txt, rng));
      targets.add(id, noisy_concept(world, b, world.sigma_txt, rng));
      originals.add(id, noisy_concept(world, a, world.sigma_txt, rng));
      out.train_source.push_back(a);
      out.train_dest.push_back(b);

      std::uint32_t tc = b;
      if (corrupt.next_double() < cfg.rho) {
        tc = corrupt.bounded(static_cast<std::uint32_t>(C - 1));
        if (tc >= b) ++tc;
      }
      image_targets.add(id, noisy_concept(world, tc, world.sigma_img, corrupt));
      out.image_target_concept.push_back(tc);

      out.triplets.push_back({id, "a photo of a " + concept_name(a),
                              "replace the " + concept_name(a) + " with a " + concept_name(b),
                              "a photo of a " + concept_name(b)});
    }
    out.train_images = images.build();
    out.train_mods = mods.build();
    out.train_targets = targets.build();
    out.train_originals = originals.build();
    out.train_image_targets = image_targets.build();
  }

  // Eval queries
  {
    // Closest gallery item of each concept to its clean direction.
    std::vector<std::size_t> best(C, cfg.gallery_size);
    std::vector<double> best_score(C, -2.0);
    for (std::size_t k = 0; k < cfg.gallery_size; ++k) {
      const auto c = out.gallery_concept[k];
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += world.basis(c, i) * static_cast<double>(out.gallery.row(k)[i]);
      if (s > best_score[c]) {
        best_score[c] = s;
        best[c] = k;
      }
    }

    Rng rng = Rng::derive(cfg.seed, {3});
    TableBuilder refs(cfg.n_eval, d, img_tag), mods(cfg.n_eval, d, txt_tag);
    for (std::size_t j = 0; j < cfg.n_eval; ++j) {
      const auto [a, b] = draw_pair(rng, C);
      const std::string qid = make_id('q', j);
      const std::string rid = make_id('r', j);
      refs.add(rid, noisy_concept(world, a, world.sigma_img, rng));
      mods.add(qid, noisy_direction(difference(a, b), world.sigma_txt, rng));

      EvalQuery q;
      q.id = qid;
      q.reference_id = rid;
      q.modification_text = "replace the " + concept_name(a) + " with a " + concept_name(b);
      q.target_id = out.gallery.ids()[best[b]];
      if (cfg.subset_size > 0) {
        std::vector<std::size_t> members = {best[b]};
        // Up to two same-concept distractors, the rest drawn from the whole gallery.
        std::vector<std::size_t> same;
        for (std::size_t k = b; k < cfg.gallery_size; k += C) {
          if (k != best[b]) same.push_back(k);
        }
        for (int n = 0; n < 2 && !same.empty() && members.size() < cfg.subset_size; ++n) {
          const auto pick = rng.bounded(static_cast<std::uint32_t>(same.size()));
          members.push_back(same[pick]);
          same.erase(same.begin() + pick);
        }
        while (members.size() < cfg.subset_size) {
          const std::size_t k = rng.bounded(static_cast<std::uint32_t>(cfg.gallery_size));
          if (std::find(members.begin(), members.end(), k) == members.end()) members.push_back(k);
        }
        std::vector<std::string> ids;
        for (std::size_t k : members) ids.push_back(out.gallery.ids()[k]);
        std::sort(ids.begin(), ids.end());
        q.subset_ids = std::move(ids);
      }
      out.queries.push_back(std::move(q));
      out.eval_source.push_back(a);
      out.eval_dest.push_back(b);
    }
    out.references = refs.build();
    out.eval_mods = mods.build();
  }
  return out;
}

SyntheticFiles synthetic_files(const std::filesystem::path& dir) {
  return {dir / "train_images.semb", dir / "train_mods.semb",  dir / "train_targets.semb",
          dir / "train_originals.semb", dir / "train_image_targets.semb", dir / "gallery.semb",
          dir / "references.semb", dir / "eval_mods.semb", dir / "eval_queries.ndjson", dir / "triplets.ndjson"};
}

SyntheticFiles write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto f = synthetic_files(dir);
  write_table(data.train_images, f.train_images);
  write_table(data.train_mods, f.train_mods);
  write_table(data.train_targets, f.train_targets);
  write_table(data.train_originals, f.train_originals);
  write_table(data.train_image_targets, f.train_image_targets);
  write_table(data.gallery, f.gallery);
  write_table(data.references, f.references);
  write_table(data.eval_mods, f.eval_mods);
  write_eval_queries(data.queries, f.eval_queries);
  write_triplets(data.triplets, f.triplets);
  return f;
}

}  // namespace scot
