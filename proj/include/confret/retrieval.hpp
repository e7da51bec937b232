#pragma once

#include "confret/pipeline.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace confret {

struct RankedReference {
  std::size_t reference = 0;
  Scalar probability = 0;
  bool unanswerable = false;
};

struct RetrievalResult {
  std::size_t query = 0;
  std::vector<RankedReference> ranked;
  std::size_t scored_candidates = 0;  // score_pair evaluations spent on this query
};

/// Top-k references by calibrated probability.
///
/// References are ordered by fused first-stage value (descending), then by
/// ascending index; the second stage is monotone, so reported probabilities
/// are non-increasing down the list. Unanswerable references come last.
RetrievalResult retrieve(const CalibratedModel& model, const ScoreSource& source, std::size_t query, std::size_t k);

/// Scores only the union of per-pair exact top-(alpha*k) raw-score shortlists.
RetrievalResult retrieve_shortlist(const CalibratedModel& model, const ScoreSource& source, std::size_t query,
                                   std::size_t k, std::size_t alpha);

struct RetrievalMode {
  std::size_t shortlist_alpha = 0;  // 0 = exhaustive
};

std::vector<RetrievalResult> batch_retrieve(const CalibratedModel& model, const ScoreSource& source,
                                            std::span<const std::size_t> query_ids, std::size_t k,
                                            RetrievalMode mode = {}, unsigned workers = 1);

/// CSV: query_id,rank,reference_id,probability,unanswerable (1-based ranks).
std::string format_results(std::span<const RetrievalResult> results);
void write_results(const std::filesystem::path& path, std::span<const RetrievalResult> results);
std::vector<RetrievalResult> read_results(const std::filesystem::path& path);

}  // namespace confret
