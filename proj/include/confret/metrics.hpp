#pragma once

#include "confret/dataset.hpp"
#include "confret/retrieval.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace confret {

struct MetricsAtK {
  std::size_t k = 0;
  double recall = 0;     // hit rate: at least one relevant in the top k
  double precision = 0;  // mean of (#relevant in top k) / k
  double map = 0;        // AP truncated at k, denominator min(#relevant, k)
};

struct MetricsReport {
  std::vector<MetricsAtK> at_k;
  std::size_t query_count = 0;
  std::size_t answerable_query_count = 0;

  const MetricsAtK& at(std::size_t k) const;
};

/// Every query in `results` counts; empty relevance sets and unanswerable
/// queries score zero. A ranking shorter than min(k, n_references) is an error.
MetricsReport ranking_metrics(std::span<const RetrievalResult> results, const RelevanceMap& relevance,
                              std::span<const std::size_t> ks, std::size_t n_references);

enum class CorrelationKind { kPearson, kSpearman };

/// Throws std::invalid_argument for length mismatch, fewer than 3 points or constant input.
double score_correlation(std::span<const double> xs, std::span<const double> ys, CorrelationKind kind);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

std::string format_report(const MetricsReport& report, const MetricsReport* baseline = nullptr);
void write_report(const std::filesystem::path& path, const MetricsReport& report,
                  const MetricsReport* baseline = nullptr);

}  // namespace confret
