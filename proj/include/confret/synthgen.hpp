#pragma once

#include "confret/dataset.hpp"
#include "confret/metrics.hpp"
#include "confret/similarity.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace confret {

/// Synthetic multimodal retrieval data with known ground truth.
///
/// Every reference draws a unit latent vector. Each query copies the latent of
/// its generating reference. An instance's embedding for (modality, space) is
/// the latent pushed through the space's seeded orthonormal map, plus
/// isotropic Gaussian noise of norm ~sigma, then unit-normalized and rounded
/// to f32. With relevant_per_query > 1, references come in blocks of that size
/// whose latents are perturbations of a shared center; a query is relevant to
/// its whole block.
struct SynthConfig {
  std::size_t n_queries = 200;
  std::size_t n_references = 200;
  ModalitySchema schema;
  std::size_t latent_dim = 16;
  std::vector<double> noise_sigma;  // per space
  std::size_t relevant_per_query = 1;
  std::vector<double> query_dropout;      // per query modality
  std::vector<double> reference_dropout;  // per reference modality
  bool keep_at_least_one = false;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument on an invalid config.
void validate(const SynthConfig& config);

MultimodalDataset generate(const SynthConfig& config);

/// Named configurations mirroring common retrieval setups:
///   "trimodal"  image/lidar/text on both sides, 50% dropout on both sides
///   "text2av"   text queries against vision+audio references, 25% vision dropout
///   "text2ts"   two text parts against series+features, 50% query dropout
///   "single"    one modality per side
SynthConfig synth_preset(const std::string& name);
std::vector<std::string> synth_preset_names();

/// Per (query, reference), score with the first pair in `priority` that is
/// observable for that instance pair and rank by raw score. References with
/// no observable priority pair rank last, flagged unanswerable.
std::vector<RetrievalResult> heuristic_rankings(const ScoreSource& source, std::span<const ModalityPair> priority,
                                                std::span<const std::size_t> query_ids, std::size_t depth);

MetricsReport heuristic_baseline(const ScoreSource& source, std::span<const ModalityPair> priority,
                                 std::span<const std::size_t> query_ids, std::span<const std::size_t> ks);

}  // namespace confret
