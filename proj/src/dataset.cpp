#include "confret/dataset.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace confret {

namespace {

template <typename Names>
void check_unique(const Names& names, const char* side) {
  std::set<std::string> seen;
  for (const auto& name : names) {
    if (name.empty()) throw FormatError(fmt::format("schema: empty {} modality name", side));
    if (!seen.insert(name).second) {
      throw FormatError(fmt::format("schema: duplicate {} modality '{}'", side, name));
    }
  }
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace

bool SharedSpace::covers(const ModalityPair& pair) const {
  return std::find(query_coverage.begin(), query_coverage.end(), pair.query) != query_coverage.end() &&
         std::find(reference_coverage.begin(), reference_coverage.end(), pair.reference) !=
             reference_coverage.end();
}

ModalitySchema::ModalitySchema(std::vector<std::string> query_modalities,
                               std::vector<std::string> reference_modalities,
                               std::vector<SharedSpace> spaces,
                               std::map<ModalityPair, std::string> pair_space)
    : query_modalities_(std::move(query_modalities)),
      reference_modalities_(std::move(reference_modalities)),
      spaces_(std::move(spaces)),
      pair_space_(std::move(pair_space)) {
  check_unique(query_modalities_, "query");
  check_unique(reference_modalities_, "reference");
  if (query_modalities_.empty() || reference_modalities_.empty()) {
    throw FormatError("schema: both sides need at least one modality");
  }

  std::set<std::string> space_names;
  for (const auto& space : spaces_) {
    if (!space_names.insert(space.name).second) {
      throw FormatError(fmt::format("schema: duplicate space '{}'", space.name));
    }
    if (space.dim < 1) throw FormatError(fmt::format("schema: space '{}' has dim 0", space.name));
    for (auto j : space.query_coverage) {
      if (j >= query_modalities_.size()) {
        throw FormatError(fmt::format("schema: space '{}' covers unknown query modality {}", space.name, j));
      }
    }
    for (auto k : space.reference_coverage) {
      if (k >= reference_modalities_.size()) {
        throw FormatError(
            fmt::format("schema: space '{}' covers unknown reference modality {}", space.name, k));
      }
    }
  }

  const auto n = reference_modalities_.size();
  coverage_.assign(query_modalities_.size() * n, -1);
  bool any = false;
  for (std::size_t j = 0; j < query_modalities_.size(); ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const ModalityPair pair{j, k};
      std::vector<std::size_t> covering;
      for (std::size_t s = 0; s < spaces_.size(); ++s) {
        if (spaces_[s].covers(pair)) covering.push_back(s);
      }
      if (auto it = pair_space_.find(pair); it != pair_space_.end()) {
        const auto s = space_index(it->second);
        if (!s) throw FormatError(fmt::format("schema: pair_space override names unknown space '{}'", it->second));
        if (!spaces_[*s].covers(pair)) {
          throw FormatError(fmt::format("schema: pair_space override {}:{} -> '{}' is not covered by that space",
                                        query_modalities_[j], reference_modalities_[k], it->second));
        }
        coverage_[j * n + k] = static_cast<int>(*s);
      } else if (covering.size() > 1) {
        throw FormatError(fmt::format("schema: ambiguous pair coverage for {}:{} (spaces {})",
                                      query_modalities_[j], reference_modalities_[k],
                                      fmt::join(covering, ",")));
      } else if (covering.size() == 1) {
        coverage_[j * n + k] = static_cast<int>(covering.front());
      }
      any = any || coverage_[j * n + k] >= 0;
    }
  }
  for (const auto& [pair, name] : pair_space_) {
    if (pair.query >= query_modalities_.size() || pair.reference >= n) {
      throw FormatError("schema: pair_space override refers to unknown modality");
    }
  }
  if (!any) throw FormatError("schema: no scoreable modality pair");
}

std::optional<std::size_t> ModalitySchema::space_for(const ModalityPair& pair) const {
  const auto n = reference_modalities_.size();
  if (pair.query >= query_modalities_.size() || pair.reference >= n) return std::nullopt;
  const int s = coverage_[pair.query * n + pair.reference];
  if (s < 0) return std::nullopt;
  return static_cast<std::size_t>(s);
}

std::vector<ModalityPair> ModalitySchema::scoreable_pairs() const {
  std::vector<ModalityPair> pairs;
  for (std::size_t j = 0; j < query_modalities_.size(); ++j) {
    for (std::size_t k = 0; k < reference_modalities_.size(); ++k) {
      if (scoreable({j, k})) pairs.push_back({j, k});
    }
  }
  return pairs;
}

namespace {
std::optional<std::size_t> find_name(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}
}  // namespace

std::optional<std::size_t> ModalitySchema::query_modality_index(const std::string& name) const {
  return find_name(query_modalities_, name);
}

std::optional<std::size_t> ModalitySchema::reference_modality_index(const std::string& name) const {
  return find_name(reference_modalities_, name);
}

std::optional<std::size_t> ModalitySchema::space_index(const std::string& name) const {
  for (std::size_t s = 0; s < spaces_.size(); ++s) {
    if (spaces_[s].name == name) return s;
  }
  return std::nullopt;
}

std::string ModalitySchema::fingerprint() const {
  std::string canonical = fmt::format("q[{}]r[{}]", fmt::join(query_modalities_, ","),
                                      fmt::join(reference_modalities_, ","));
  for (const auto& space : spaces_) {
    canonical += fmt::format("s[{};{};{};{}]", space.name, space.dim, fmt::join(space.query_coverage, ","),
                             fmt::join(space.reference_coverage, ","));
  }
  for (const auto& [pair, name] : pair_space_) {
    canonical += fmt::format("o[{}:{}={}]", pair.query, pair.reference, name);
  }
  return fmt::format("{:016x}", fnv1a64(canonical));
}

RelevanceMap::RelevanceMap(std::vector<std::vector<std::size_t>> sets) : sets_(std::move(sets)) {
  for (auto& set : sets_) {
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
  }
}

bool RelevanceMap::is_relevant(std::size_t query, std::size_t reference) const {
  const auto& set = sets_.at(query);
  return std::binary_search(set.begin(), set.end(), reference);
}

const EmbeddingMatrix& MultimodalDataset::matrix(Side side, std::size_t space, std::size_t modality) const {
  const auto& per_side = side == Side::kQuery ? embeddings.at(space).query : embeddings.at(space).reference;
  auto it = per_side.find(modality);
  if (it == per_side.end()) {
    throw std::out_of_range(fmt::format("no embeddings for modality {} in space {}", modality, space));
  }
  return it->second;
}

void validate(const MultimodalDataset& dataset) {
  const auto& schema = dataset.schema;
  const auto& spaces = schema.spaces();
  if (dataset.embeddings.size() != spaces.size()) {
    throw FormatError("dataset: embeddings do not match the schema's space list");
  }
  auto check_side = [&](const std::map<std::size_t, EmbeddingMatrix>& mats, const std::vector<std::size_t>& coverage,
                        std::size_t rows, const SharedSpace& space, const char* side,
                        const std::vector<std::string>& names) {
    for (auto m : coverage) {
      auto it = mats.find(m);
      if (it == mats.end()) {
        throw FormatError(fmt::format("dataset: space '{}' lacks {} embeddings for '{}'", space.name, side, names[m]));
      }
      const auto& mat = it->second;
      if (static_cast<std::size_t>(mat.rows()) != rows) {
        throw FormatError(fmt::format("dataset: dimension mismatch: {} '{}' in space '{}' has {} rows, expected {}",
                                      side, names[m], space.name, mat.rows(), rows));
      }
      if (static_cast<std::size_t>(mat.cols()) != space.dim) {
        throw FormatError(fmt::format("dataset: dimension mismatch: {} '{}' in space '{}' has dim {}, expected {}",
                                      side, names[m], space.name, mat.cols(), space.dim));
      }
      if (!mat.allFinite()) {
        throw FormatError(fmt::format("dataset: non-finite value in {} '{}' of space '{}'", side, names[m], space.name));
      }
    }
    if (mats.size() != coverage.size()) {
      throw FormatError(fmt::format("dataset: space '{}' has {} embeddings for uncovered modalities", space.name, side));
    }
  };
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    check_side(dataset.embeddings[s].query, spaces[s].query_coverage, dataset.num_queries, spaces[s], "query",
               schema.query_modalities());
    check_side(dataset.embeddings[s].reference, spaces[s].reference_coverage, dataset.num_references, spaces[s],
               "reference", schema.reference_modalities());
  }
  auto check_mask = [](const PresenceMask& mask, std::size_t rows, std::size_t cols, const char* side) {
    if (static_cast<std::size_t>(mask.rows()) != rows || static_cast<std::size_t>(mask.cols()) != cols) {
      throw FormatError(fmt::format("dataset: dimension mismatch: {} mask is {}x{}, expected {}x{}", side,
                                    mask.rows(), mask.cols(), rows, cols));
    }
    if ((mask > 1).any()) throw FormatError(fmt::format("dataset: {} mask has values other than 0/1", side));
  };
  check_mask(dataset.query_mask, dataset.num_queries, schema.num_query_modalities(), "query");
  check_mask(dataset.reference_mask, dataset.num_references, schema.num_reference_modalities(), "reference");
  if (dataset.relevance.num_queries() != dataset.num_queries) {
    throw FormatError("dataset: relevance map does not cover every query");
  }
  for (std::size_t q = 0; q < dataset.num_queries; ++q) {
    for (auto r : dataset.relevance.relevant(q)) {
      if (r >= dataset.num_references) {
        throw FormatError(fmt::format("dataset: relevance index out of range: query {} -> reference {}", q, r));
      }
    }
  }
}

RelevanceMap relevance_from_positions(const Positions& query_positions, const Positions& reference_positions,
                                      Scalar threshold_meters) {
  if (!(threshold_meters > 0)) throw std::invalid_argument("relevance threshold must be positive");
  std::vector<std::vector<std::size_t>> sets(static_cast<std::size_t>(query_positions.rows()));
  for (Eigen::Index q = 0; q < query_positions.rows(); ++q) {
    for (Eigen::Index r = 0; r < reference_positions.rows(); ++r) {
      if ((query_positions.row(q) - reference_positions.row(r)).norm() <= threshold_meters) {
        sets[static_cast<std::size_t>(q)].push_back(static_cast<std::size_t>(r));
      }
    }
  }
  return RelevanceMap(std::move(sets));
}

PresenceMask apply_modality_dropout(const PresenceMask& mask, std::span<const double> probs, std::uint64_t seed,
                                    bool keep_at_least_one) {
  if (probs.size() != static_cast<std::size_t>(mask.cols())) {
    throw std::invalid_argument("dropout: one probability per modality required");
  }
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dropout: probabilities must lie in [0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PresenceMask out = mask;
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    const bool had_any = (mask.row(i) != 0).any();
    bool surviving = false;
    // Every bit consumes one draw, present or not, so streams stay aligned across rows.
    for (Eigen::Index m = 0; m < mask.cols(); ++m) {
      const bool drop = unit(rng) < probs[static_cast<std::size_t>(m)];
      out(i, m) = (mask(i, m) != 0 && !drop) ? 1 : 0;
      surviving = surviving || out(i, m) != 0;
    }
    if (!keep_at_least_one || !had_any || surviving) continue;

    bool can_survive = false;
    for (Eigen::Index m = 0; m < mask.cols(); ++m) {
      can_survive = can_survive || (mask(i, m) != 0 && probs[static_cast<std::size_t>(m)] < 1.0);
    }
    if (!can_survive) {
      for (Eigen::Index m = 0; m < mask.cols(); ++m) {
        if (mask(i, m) != 0) {
          out(i, m) = 1;
          break;
        }
      }
      continue;
    }
    while (!surviving) {
      for (Eigen::Index m = 0; m < mask.cols(); ++m) {
        const bool drop = unit(rng) < probs[static_cast<std::size_t>(m)];
        out(i, m) = (mask(i, m) != 0 && !drop) ? 1 : 0;
        surviving = surviving || out(i, m) != 0;
      }
    }
  }
  return out;
}

QuerySplit split_queries(std::size_t n_queries, double calibration_fraction, std::uint64_t seed) {
  if (n_queries < 2) throw std::invalid_argument("split_queries: need at least 2 queries");
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw std::invalid_argument("split_queries: calibration fraction must lie in (0, 1)");
  }
  const auto n_cal = static_cast<std::size_t>(std::llround(calibration_fraction * static_cast<double>(n_queries)));
  if (n_cal == 0 || n_cal >= n_queries) {
    throw std::invalid_argument(
        fmt::format("split_queries: fraction {} of {} queries leaves an empty side", calibration_fraction, n_queries));
  }
  std::vector<std::size_t> ids(n_queries);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  QuerySplit split;
  split.calibration.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_cal));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_cal), ids.end());
  std::sort(split.calibration.begin(), split.calibration.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace confret
