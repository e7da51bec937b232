#pragma once

#include "confret/core.hpp"
#include "confret/dataset.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <span>
#include <vector>

namespace confret {

/// Cosine between two equal-length vectors, clamped into [-1, 1].
///
/// A zero-norm argument yields 0 and sets `*degenerate` when given.
template <typename DerivedA, typename DerivedB>
Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& u, const Eigen::MatrixBase<DerivedB>& v,
                         bool* degenerate = nullptr) {
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  if (degenerate) *degenerate = nu == 0 || nv == 0;
  if (nu == 0 || nv == 0) return 0;
  return std::clamp<Scalar>(u.dot(v) / (nu * nv), -1, 1);
}

/// Cosine from a dot product and precomputed norms; bitwise equal to
/// cosine_similarity() when the norms come from the same rows.
inline Scalar cosine_from_parts(Scalar dot, Scalar norm_u, Scalar norm_v) {
  if (norm_u == 0 || norm_v == 0) return 0;
  return std::clamp<Scalar>(dot / (norm_u * norm_v), -1, 1);
}

/// η̄×n grid of cross-modal scores between one query and one reference.
/// Unobserved entries hold the -1 sentinel; always branch on `observed`.
struct SimilarityMatrix {
  Matrix values;
  BoolGrid observed;

  std::size_t observed_count() const { return static_cast<std::size_t>(observed.count()); }
};

/// Raw per-pair scores for a dataset. The default is cosine similarity over
/// the embeddings; other sources (e.g. precomputed or reweighted scores) can
/// be swapped in without touching the calibration code.
class ScoreSource {
 public:
  virtual ~ScoreSource() = default;

  virtual const MultimodalDataset& dataset() const = 0;

  /// Score of a scoreable pair. Callers check presence and coverage first.
  virtual Scalar score(const ModalityPair& pair, std::size_t query, std::size_t reference) const = 0;

  /// True when both modalities are present and some space scores the pair.
  bool observable(const ModalityPair& pair, std::size_t query, std::size_t reference) const {
    const auto& d = dataset();
    return d.query_has(query, pair.query) && d.reference_has(reference, pair.reference) &&
           d.schema.scoreable(pair);
  }
};

/// Cosine scores with cached row norms.
class CosineScores final : public ScoreSource {
 public:
  explicit CosineScores(const MultimodalDataset& dataset);

  const MultimodalDataset& dataset() const override { return dataset_; }
  Scalar score(const ModalityPair& pair, std::size_t query, std::size_t reference) const override;

 private:
  struct PairView {
    const EmbeddingMatrix* query = nullptr;
    const EmbeddingMatrix* reference = nullptr;
    const Vector* query_norms = nullptr;
    const Vector* reference_norms = nullptr;
  };

  const MultimodalDataset& dataset_;
  std::vector<std::vector<Vector>> query_norms_;      // [space][modality]
  std::vector<std::vector<Vector>> reference_norms_;  // [space][modality]
  std::vector<PairView> pairs_;                       // η̄×n, row-major
};

/// Masked similarity matrix computed directly from the embeddings.
SimilarityMatrix similarity_matrix(const MultimodalDataset& dataset, std::size_t query, std::size_t reference);

/// Same matrix, with scores drawn from `source`.
SimilarityMatrix similarity_matrix(const ScoreSource& source, std::size_t query, std::size_t reference);

struct ScoreTable {
  Matrix values;  // -1 where unobserved
  BoolGrid observed;
};

/// Scores of one modality pair for every (query_ids[a], reference_ids[b]).
/// Throws std::invalid_argument for an unscoreable pair.
ScoreTable pairwise_score_table(const ScoreSource& source, const ModalityPair& pair,
                                std::span<const std::size_t> query_ids, std::span<const std::size_t> reference_ids,
                                unsigned workers = 1);

ScoreTable pairwise_score_table(const MultimodalDataset& dataset, const ModalityPair& pair,
                                std::span<const std::size_t> query_ids, std::span<const std::size_t> reference_ids,
                                unsigned workers = 1);

}  // namespace confret
