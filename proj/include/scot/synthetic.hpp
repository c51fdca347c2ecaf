#pragma once

// Desk-scale stand-in for an aligned image/text encoder: C orthonormal concept
// directions in R^d, with image and text embeddings drawn as noisy copies of
// them. Noise is isotropic Gaussian scaled so that E|noise|^2 = sigma^2.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "scot/embedding_store.hpp"
#include "scot/rng.hpp"

namespace scot {

struct ConceptWorld {
  std::size_t concepts = 0;
  std::size_t dim = 0;
  Mat<double> basis;  // concepts x dim, orthonormal rows
  double sigma_img = 0;
  double sigma_txt = 0;
  std::uint64_t seed = 0;
};

/// Throws BadDims unless 0 < C <= d, BadRange unless 0 <= sigma < 0.5.
ConceptWorld gen_world(std::size_t concepts, std::size_t dim, double sigma_img, double sigma_txt,
                       std::uint64_t seed);

/// normalize(basis[c] + sigma * g / sqrt(d)), g ~ N(0, I).
Vec<float> noisy_concept(const ConceptWorld& world, std::size_t concept_index, double sigma, Rng& rng);

struct SyntheticConfig {
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  std::size_t gallery_size = 0;
  std::uint64_t seed = 0;
  double rho = 0.0;             // fraction of image targets with a wrong concept
  std::size_t subset_size = 6;  // 0 disables subsets
};

struct SyntheticData {
  // Training tables share ids t000000...
  EmbeddingTable train_images;
  EmbeddingTable train_mods;
  EmbeddingTable train_targets;
  EmbeddingTable train_originals;
  EmbeddingTable train_image_targets;
  std::vector<std::uint32_t> train_source;  // concept a
  std::vector<std::uint32_t> train_dest;    // concept b
  std::vector<std::uint32_t> image_target_concept;

  EmbeddingTable gallery;  // ids g000000..., concept = index % C
  std::vector<std::uint32_t> gallery_concept;

  EmbeddingTable references;  // ids r000000..., one per eval query
  EmbeddingTable eval_mods;   // keyed by query id q000000...
  std::vector<EvalQuery> queries;
  std::vector<std::uint32_t> eval_source;
  std::vector<std::uint32_t> eval_dest;

  std::vector<TextTriplet> triplets;  // one per training example
};

/// Each example draws concepts a != b and sets
///   V = n_img(e_a), T = n_txt(e_a), T_m = n_txt(e_b - e_a), T_u = n_txt(e_b).
/// The eval target is the gallery item of concept b closest to e_b. Gallery,
/// train, eval and image-target draws use disjoint Rng streams.
/// Throws BadSizes for empty sizes or a gallery smaller than C.
SyntheticData gen_dataset(const ConceptWorld& world, const SyntheticConfig& cfg);

struct SyntheticFiles {
  std::filesystem::path train_images, train_mods, train_targets, train_originals, train_image_targets;
  std::filesystem::path gallery, references, eval_mods, eval_queries, triplets;
};

SyntheticFiles synthetic_files(const std::filesystem::path& dir);
SyntheticFiles write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

}  // namespace scot
