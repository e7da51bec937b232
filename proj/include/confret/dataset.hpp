#pragma once

#include "confret/core.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace confret {

/// Row-major embeddings, one instance per row. Stored as f32 on disk.
using EmbeddingMatrix = RowMatrix;

/// Planar (x, y) positions in meters, one instance per row.
using Positions = Eigen::Matrix<Scalar, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// 0/1 availability per (instance, modality).
using PresenceMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Side { kQuery, kReference };

struct SharedSpace {
  std::string name;
  std::size_t dim = 0;
  std::vector<std::size_t> query_coverage;      // query modality indices
  std::vector<std::size_t> reference_coverage;  // reference modality indices

  bool covers(const ModalityPair& pair) const;
};

/// Modalities on both sides plus the shared spaces scoring them.
///
/// Each (query modality, reference modality) pair is scored in at most one
/// space. A pair covered by several spaces must be resolved by `pair_space`.
class ModalitySchema {
 public:
  ModalitySchema() = default;
  /// Validates names, dims and pair coverage. Throws FormatError.
  ModalitySchema(std::vector<std::string> query_modalities,
                 std::vector<std::string> reference_modalities,
                 std::vector<SharedSpace> spaces,
                 std::map<ModalityPair, std::string> pair_space = {});

  const std::vector<std::string>& query_modalities() const { return query_modalities_; }
  const std::vector<std::string>& reference_modalities() const { return reference_modalities_; }
  const std::vector<SharedSpace>& spaces() const { return spaces_; }
  const std::map<ModalityPair, std::string>& pair_space_overrides() const { return pair_space_; }

  std::size_t num_query_modalities() const { return query_modalities_.size(); }
  std::size_t num_reference_modalities() const { return reference_modalities_.size(); }

  /// Index of the space scoring `pair`, if any.
  std::optional<std::size_t> space_for(const ModalityPair& pair) const;
  bool scoreable(const ModalityPair& pair) const { return space_for(pair).has_value(); }
  /// Scoreable pairs in row-major (query, reference) order.
  std::vector<ModalityPair> scoreable_pairs() const;

  std::optional<std::size_t> query_modality_index(const std::string& name) const;
  std::optional<std::size_t> reference_modality_index(const std::string& name) const;
  std::optional<std::size_t> space_index(const std::string& name) const;

  /// Stable hex digest over the canonical schema description.
  std::string fingerprint() const;

 private:
  std::vector<std::string> query_modalities_;
  std::vector<std::string> reference_modalities_;
  std::vector<SharedSpace> spaces_;
  std::map<ModalityPair, std::string> pair_space_;
  std::vector<int> coverage_;  // η̄×n table of space index, -1 if none
};

/// Per query, the sorted set of relevant reference indices.
class RelevanceMap {
 public:
  RelevanceMap() = default;
  explicit RelevanceMap(std::vector<std::vector<std::size_t>> sets);

  std::size_t num_queries() const { return sets_.size(); }
  const std::vector<std::size_t>& relevant(std::size_t query) const { return sets_.at(query); }
  bool is_relevant(std::size_t query, std::size_t reference) const;

 private:
  std::vector<std::vector<std::size_t>> sets_;
};

/// Embeddings of one space, keyed by modality index, for both sides.
struct SpaceEmbeddings {
  std::map<std::size_t, EmbeddingMatrix> query;
  std::map<std::size_t, EmbeddingMatrix> reference;
};

struct MultimodalDataset {
  ModalitySchema schema;
  std::size_t num_queries = 0;
  std::size_t num_references = 0;
  std::vector<SpaceEmbeddings> embeddings;  // parallel to schema.spaces()
  PresenceMask query_mask;
  PresenceMask reference_mask;
  RelevanceMap relevance;

  bool query_has(std::size_t query, std::size_t modality) const {
    return query_mask(static_cast<Eigen::Index>(query), static_cast<Eigen::Index>(modality)) != 0;
  }
  bool reference_has(std::size_t reference, std::size_t modality) const {
    return reference_mask(static_cast<Eigen::Index>(reference), static_cast<Eigen::Index>(modality)) != 0;
  }

  /// Embedding matrix for `modality` of `side` in space `space`.
  const EmbeddingMatrix& matrix(Side side, std::size_t space, std::size_t modality) const;
};

/// Checks every cross-field invariant. Throws FormatError.
void validate(const MultimodalDataset& dataset);

/// Reference r is relevant to query q iff their planar distance is <= threshold.
RelevanceMap relevance_from_positions(const Positions& query_positions,
                                      const Positions& reference_positions,
                                      Scalar threshold_meters);

/// Independently drops each present bit with its modality's probability.
PresenceMask apply_modality_dropout(const PresenceMask& mask, std::span<const double> probs,
                                    std::uint64_t seed, bool keep_at_least_one = false);

struct QuerySplit {
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
};

/// Seeded disjoint split; calibration size is round(fraction * n). Both lists sorted.
QuerySplit split_queries(std::size_t n_queries, double calibration_fraction, std::uint64_t seed);

// Binary and manifest formats.

EmbeddingMatrix read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path, const EmbeddingMatrix& matrix);
PresenceMask read_mask_file(const std::filesystem::path& path);
void write_mask_file(const std::filesystem::path& path, const PresenceMask& mask);

std::vector<std::pair<std::size_t, std::size_t>> read_relevance_pairs(const std::filesystem::path& path);
Positions read_positions(const std::filesystem::path& path);

MultimodalDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes the manifest plus embedding/mask/relevance files into `directory`.
/// Returns the manifest path. Relevance is written as a pairs file.
std::filesystem::path write_dataset(const MultimodalDataset& dataset,
                                    const std::filesystem::path& directory);

/// Writes `contents` to a sibling temp file and renames it into place.
void write_file_atomically(const std::filesystem::path& path, std::span<const char> contents);
void write_file_atomically(const std::filesystem::path& path, const std::string& contents);

}  // namespace confret
