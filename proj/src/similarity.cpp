#include "confret/similarity.hpp"

#include "confret/parallel.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace confret {

namespace {

Vector row_norms(const EmbeddingMatrix& m) {
  Vector norms(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) norms(i) = m.row(i).norm();
  return norms;
}

void check_index(std::size_t index, std::size_t size, const char* what) {
  if (index >= size) throw std::out_of_range(fmt::format("{} index {} out of range ({})", what, index, size));
}

}  // namespace

CosineScores::CosineScores(const MultimodalDataset& dataset) : dataset_(dataset) {
  const auto& schema = dataset.schema;
  const auto n_spaces = schema.spaces().size();
  query_norms_.resize(n_spaces);
  reference_norms_.resize(n_spaces);
  for (std::size_t s = 0; s < n_spaces; ++s) {
    query_norms_[s].resize(schema.num_query_modalities());
    reference_norms_[s].resize(schema.num_reference_modalities());
    for (const auto& [j, m] : dataset.embeddings[s].query) query_norms_[s][j] = row_norms(m);
    for (const auto& [k, m] : dataset.embeddings[s].reference) reference_norms_[s][k] = row_norms(m);
  }
  const auto n = schema.num_reference_modalities();
  pairs_.resize(schema.num_query_modalities() * n);
  for (const auto& pair : schema.scoreable_pairs()) {
    const auto s = *schema.space_for(pair);
    pairs_[pair.query * n + pair.reference] = {&dataset.matrix(Side::kQuery, s, pair.query),
                                               &dataset.matrix(Side::kReference, s, pair.reference),
                                               &query_norms_[s][pair.query], &reference_norms_[s][pair.reference]};
  }
}

Scalar CosineScores::score(const ModalityPair& pair, std::size_t query, std::size_t reference) const {
  const auto& view = pairs_[pair.query * dataset_.schema.num_reference_modalities() + pair.reference];
  const auto q = static_cast<Eigen::Index>(query);
  const auto r = static_cast<Eigen::Index>(reference);
  return cosine_from_parts(view.query->row(q).dot(view.reference->row(r)), (*view.query_norms)(q),
                           (*view.reference_norms)(r));
}

namespace {

template <typename ScoreFn>
SimilarityMatrix assemble(const MultimodalDataset& dataset, std::size_t query, std::size_t reference,
                          ScoreFn&& score) {
  check_index(query, dataset.num_queries, "query");
  check_index(reference, dataset.num_references, "reference");
  const auto& schema = dataset.schema;
  const auto rows = static_cast<Eigen::Index>(schema.num_query_modalities());
  const auto cols = static_cast<Eigen::Index>(schema.num_reference_modalities());
  SimilarityMatrix sim{Matrix::Constant(rows, cols, -1), BoolGrid::Constant(rows, cols, false)};
  for (Eigen::Index j = 0; j < rows; ++j) {
    if (!dataset.query_has(query, static_cast<std::size_t>(j))) continue;
    for (Eigen::Index k = 0; k < cols; ++k) {
      const ModalityPair pair{static_cast<std::size_t>(j), static_cast<std::size_t>(k)};
      if (!dataset.reference_has(reference, pair.reference)) continue;
      const auto space = schema.space_for(pair);
      if (!space) continue;
      sim.values(j, k) = score(pair, *space);
      sim.observed(j, k) = true;
    }
  }
  return sim;
}

}  // namespace

SimilarityMatrix similarity_matrix(const MultimodalDataset& dataset, std::size_t query, std::size_t reference) {
  return assemble(dataset, query, reference, [&](const ModalityPair& pair, std::size_t space) {
    const auto& qm = dataset.matrix(Side::kQuery, space, pair.query);
    const auto& rm = dataset.matrix(Side::kReference, space, pair.reference);
    return cosine_similarity(qm.row(static_cast<Eigen::Index>(query)), rm.row(static_cast<Eigen::Index>(reference)));
  });
}

SimilarityMatrix similarity_matrix(const ScoreSource& source, std::size_t query, std::size_t reference) {
  return assemble(source.dataset(), query, reference,
                  [&](const ModalityPair& pair, std::size_t) { return source.score(pair, query, reference); });
}

ScoreTable pairwise_score_table(const ScoreSource& source, const ModalityPair& pair,
                                std::span<const std::size_t> query_ids, std::span<const std::size_t> reference_ids,
                                unsigned workers) {
  const auto& dataset = source.dataset();
  if (!dataset.schema.scoreable(pair)) {
    throw std::invalid_argument(fmt::format("pair {}:{} is not scoreable", pair.query, pair.reference));
  }
  for (auto q : query_ids) check_index(q, dataset.num_queries, "query");
  for (auto r : reference_ids) check_index(r, dataset.num_references, "reference");
  const auto rows = static_cast<Eigen::Index>(query_ids.size());
  const auto cols = static_cast<Eigen::Index>(reference_ids.size());
  ScoreTable table{Matrix::Constant(rows, cols, -1), BoolGrid::Constant(rows, cols, false)};
  parallel_for(query_ids.size(), workers, [&](std::size_t a) {
    const auto q = query_ids[a];
    if (!dataset.query_has(q, pair.query)) return;
    for (Eigen::Index b = 0; b < cols; ++b) {
      const auto r = reference_ids[static_cast<std::size_t>(b)];
      if (!dataset.reference_has(r, pair.reference)) continue;
      table.values(static_cast<Eigen::Index>(a), b) = source.score(pair, q, r);
      table.observed(static_cast<Eigen::Index>(a), b) = true;
    }
  });
  return table;
}

ScoreTable pairwise_score_table(const MultimodalDataset& dataset, const ModalityPair& pair,
                                std::span<const std::size_t> query_ids, std::span<const std::size_t> reference_ids,
                                unsigned workers) {
  const CosineScores source(dataset);
  return pairwise_score_table(source, pair, query_ids, reference_ids, workers);
}

}  // namespace confret
