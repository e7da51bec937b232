#include "confret/synthgen.hpp"

#include <Eigen/QR>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace confret {

namespace {

enum Stream : std::uint32_t {
  kLatents = 1,
  kTargets,
  kMaps,
  kQueryNoise,
  kReferenceNoise,
  kQueryDropout,
  kReferenceDropout,
};

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint32_t stream, std::uint32_t a = 0, std::uint32_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, a, b};
  return std::mt19937_64(seq);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint32_t stream) {
  auto rng = stream_rng(seed, stream);
  return rng();
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  // Fill in row-major order so the draw sequence is layout independent.
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

/// d×L map with orthonormal columns (d >= L) or orthonormal rows (d < L).
Matrix orthonormal_map(std::size_t dim, std::size_t latent_dim, std::mt19937_64& rng) {
  const auto big = static_cast<Eigen::Index>(std::max(dim, latent_dim));
  const auto small = static_cast<Eigen::Index>(std::min(dim, latent_dim));
  const Matrix g = gaussian(big, small, rng);
  const Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  // Fix column signs so the map does not depend on the QR sign convention.
  const Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < small; ++c) {
    if (r(c, c) < 0) q.col(c) *= -1;
  }
  if (dim >= latent_dim) return q;
  return q.transpose();
}

void normalize_rows(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n > 0) m.row(i) /= n;
  }
}

EmbeddingMatrix embed(const Matrix& latents, const Matrix& map, double sigma, std::mt19937_64& rng) {
  const auto dim = map.rows();
  Matrix out = latents * map.transpose();
  if (sigma > 0) out += gaussian(out.rows(), dim, rng) * (sigma / std::sqrt(static_cast<double>(dim)));
  normalize_rows(out);
  return out.cast<float>().cast<Scalar>();
}

}  // namespace

void validate(const SynthConfig& config) {
  const auto& schema = config.schema;
  if (config.n_queries < 1 || config.n_references < 1) throw std::invalid_argument("synth: counts must be >= 1");
  if (config.latent_dim < 1) throw std::invalid_argument("synth: latent_dim must be >= 1");
  if (config.relevant_per_query < 1 || config.relevant_per_query > config.n_references) {
    throw std::invalid_argument("synth: relevant_per_query must lie in [1, n_references]");
  }
  if (schema.spaces().empty()) throw std::invalid_argument("synth: schema has no spaces");
  if (config.noise_sigma.size() != schema.spaces().size()) {
    throw std::invalid_argument(fmt::format("synth: need {} noise sigmas (one per space), got {}",
                                            schema.spaces().size(), config.noise_sigma.size()));
  }
  for (double s : config.noise_sigma) {
    if (!std::isfinite(s) || s < 0) throw std::invalid_argument("synth: noise sigmas must be finite and >= 0");
  }
  auto check_probs = [](const std::vector<double>& probs, std::size_t n, const char* side) {
    if (probs.size() != n) {
      throw std::invalid_argument(fmt::format("synth: need {} {} dropout probabilities, got {}", n, side, probs.size()));
    }
    for (double p : probs) {
      if (!(p >= 0 && p <= 1)) throw std::invalid_argument("synth: dropout probabilities must lie in [0, 1]");
    }
  };
  check_probs(config.query_dropout, schema.num_query_modalities(), "query");
  check_probs(config.reference_dropout, schema.num_reference_modalities(), "reference");
}

MultimodalDataset generate(const SynthConfig& config) {
  validate(config);
  const auto& schema = config.schema;
  const auto L = static_cast<Eigen::Index>(config.latent_dim);
  const auto n_refs = static_cast<Eigen::Index>(config.n_references);
  const auto n_queries = static_cast<Eigen::Index>(config.n_queries);
  const auto block = config.relevant_per_query;

  auto latent_rng = stream_rng(config.seed, kLatents);
  Matrix ref_latents;
  if (block == 1) {
    ref_latents = gaussian(n_refs, L, latent_rng);
  } else {
    const auto n_blocks = static_cast<Eigen::Index>((config.n_references + block - 1) / block);
    Matrix centers = gaussian(n_blocks, L, latent_rng);
    normalize_rows(centers);
    constexpr double kBlockSpread = 0.35;
    const Matrix jitter = gaussian(n_refs, L, latent_rng) * (kBlockSpread / std::sqrt(static_cast<double>(L)));
    ref_latents.resize(n_refs, L);
    for (Eigen::Index r = 0; r < n_refs; ++r) {
      ref_latents.row(r) = centers.row(r / static_cast<Eigen::Index>(block)) + jitter.row(r);
    }
  }
  normalize_rows(ref_latents);

  auto target_rng = stream_rng(config.seed, kTargets);
  std::uniform_int_distribution<std::size_t> pick(0, config.n_references - 1);
  std::vector<std::size_t> targets(config.n_queries);
  Matrix query_latents(n_queries, L);
  for (Eigen::Index q = 0; q < n_queries; ++q) {
    targets[static_cast<std::size_t>(q)] = pick(target_rng);
    query_latents.row(q) = ref_latents.row(static_cast<Eigen::Index>(targets[static_cast<std::size_t>(q)]));
  }

  MultimodalDataset dataset;
  dataset.schema = schema;
  dataset.num_queries = config.n_queries;
  dataset.num_references = config.n_references;
  dataset.embeddings.resize(schema.spaces().size());
  for (std::size_t s = 0; s < schema.spaces().size(); ++s) {
    const auto& space = schema.spaces()[s];
    auto map_rng = stream_rng(config.seed, kMaps, static_cast<std::uint32_t>(s));
    const Matrix map = orthonormal_map(space.dim, config.latent_dim, map_rng);
    for (auto j : space.query_coverage) {
      auto rng = stream_rng(config.seed, kQueryNoise, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(j));
      dataset.embeddings[s].query.emplace(j, embed(query_latents, map, config.noise_sigma[s], rng));
    }
    for (auto k : space.reference_coverage) {
      auto rng =
          stream_rng(config.seed, kReferenceNoise, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(k));
      dataset.embeddings[s].reference.emplace(k, embed(ref_latents, map, config.noise_sigma[s], rng));
    }
  }

  dataset.query_mask = apply_modality_dropout(
      PresenceMask::Ones(n_queries, static_cast<Eigen::Index>(schema.num_query_modalities())), config.query_dropout,
      stream_seed(config.seed, kQueryDropout), config.keep_at_least_one);
  dataset.reference_mask = apply_modality_dropout(
      PresenceMask::Ones(n_refs, static_cast<Eigen::Index>(schema.num_reference_modalities())),
      config.reference_dropout, stream_seed(config.seed, kReferenceDropout), config.keep_at_least_one);

  std::vector<std::vector<std::size_t>> relevant(config.n_queries);
  for (std::size_t q = 0; q < config.n_queries; ++q) {
    const auto first = targets[q] / block * block;
    for (auto r = first; r < std::min(first + block, config.n_references); ++r) relevant[q].push_back(r);
  }
  dataset.relevance = RelevanceMap(std::move(relevant));
  confret::validate(dataset);
  return dataset;
}

std::vector<std::string> synth_preset_names() { return {"trimodal", "text2av", "text2ts", "single"}; }

SynthConfig synth_preset(const std::string& name) {
  SynthConfig config;
  if (name == "trimodal") {
    // image=0, lidar=1, text=2 on both sides.
    config.schema = ModalitySchema({"image", "lidar", "text"}, {"image", "lidar", "text"},
                                   {{"vision", 32, {0, 1}, {0, 1}},
                                    {"caption", 32, {2}, {2}},
                                    {"text_to_vision", 24, {2}, {0, 1}},
                                    {"vision_to_text", 24, {0, 1}, {2}}});
    config.n_queries = 600;
    config.n_references = 400;
    config.relevant_per_query = 4;
    config.noise_sigma = {1.0, 1.2, 1.6, 1.6};
    config.query_dropout = {0.5, 0.5, 0.5};
    config.reference_dropout = {0.5, 0.5, 0.5};
  } else if (name == "text2av") {
    config.schema = ModalitySchema({"text"}, {"vision", "audio"}, {{"text_vision", 32, {0}, {0}},
                                                                   {"text_audio", 32, {0}, {1}}});
    config.n_queries = 600;
    config.n_references = 400;
    config.noise_sigma = {0.9, 1.3};
    config.query_dropout = {0.0};
    config.reference_dropout = {0.25, 0.0};
  } else if (name == "text2ts") {
    config.schema = ModalitySchema({"history", "concurrent"}, {"series", "features"},
                                   {{"text_series", 24, {0, 1}, {0, 1}}});
    config.n_queries = 300;
    config.n_references = 300;
    config.noise_sigma = {1.5};
    config.query_dropout = {0.5, 0.5};
    config.reference_dropout = {0.0, 0.0};
  } else if (name == "single") {
    config.schema = ModalitySchema({"text"}, {"image"}, {{"shared", 16, {0}, {0}}});
    config.noise_sigma = {0.5};
    config.query_dropout = {0.0};
    config.reference_dropout = {0.0};
  } else {
    throw std::invalid_argument(fmt::format("unknown synth preset '{}'", name));
  }
  return config;
}

std::vector<RetrievalResult> heuristic_rankings(const ScoreSource& source, std::span<const ModalityPair> priority,
                                                std::span<const std::size_t> query_ids, std::size_t depth) {
  const auto& dataset = source.dataset();
  for (const auto& pair : priority) {
    if (!dataset.schema.scoreable(pair)) {
      throw std::invalid_argument(fmt::format("heuristic: pair {}:{} is not scoreable", pair.query, pair.reference));
    }
  }
  std::vector<RetrievalResult> results;
  results.reserve(query_ids.size());
  for (auto q : query_ids) {
    struct Entry {
      std::size_t reference;
      bool scored;
      Scalar score;
    };
    std::vector<Entry> entries;
    entries.reserve(dataset.num_references);
    for (std::size_t r = 0; r < dataset.num_references; ++r) {
      Entry e{r, false, 0};
      for (const auto& pair : priority) {
        if (source.observable(pair, q, r)) {
          e = {r, true, source.score(pair, q, r)};
          break;
        }
      }
      entries.push_back(e);
    }
    const auto take = std::min(depth, entries.size());
    std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(take), entries.end(),
                      [](const Entry& a, const Entry& b) {
                        if (a.scored != b.scored) return a.scored;
                        if (a.scored && a.score != b.score) return a.score > b.score;
                        return a.reference < b.reference;
                      });
    RetrievalResult result{q, {}, dataset.num_references};
    for (std::size_t i = 0; i < take; ++i) {
      // Raw scores are not probabilities; the slot carries the raw score.
      result.ranked.push_back({entries[i].reference, entries[i].scored ? entries[i].score : 0, !entries[i].scored});
    }
    results.push_back(std::move(result));
  }
  return results;
}

MetricsReport heuristic_baseline(const ScoreSource& source, std::span<const ModalityPair> priority,
                                 std::span<const std::size_t> query_ids, std::span<const std::size_t> ks) {
  const std::size_t depth = ks.empty() ? 1 : *std::max_element(ks.begin(), ks.end());
  const auto results = heuristic_rankings(source, priority, query_ids, depth);
  return ranking_metrics(results, source.dataset().relevance, ks, source.dataset().num_references);
}

}  // namespace confret
