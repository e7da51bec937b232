#include "confret/metrics.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <numeric>

namespace confret {

const MetricsAtK& MetricsReport::at(std::size_t k) const {
  for (const auto& m : at_k) {
    if (m.k == k) return m;
  }
  throw std::out_of_range(fmt::format("no metrics for k={}", k));
}

MetricsReport ranking_metrics(std::span<const RetrievalResult> results, const RelevanceMap& relevance,
                              std::span<const std::size_t> ks, std::size_t n_references) {
  MetricsReport report;
  report.query_count = results.size();
  for (auto k : ks) {
    if (k < 1) throw std::invalid_argument("metrics: k must be at least 1");
    report.at_k.push_back({k, 0, 0, 0});
  }
  for (const auto& result : results) {
    const auto& relevant = relevance.relevant(result.query);
    const bool answerable =
        std::any_of(result.ranked.begin(), result.ranked.end(), [](const auto& e) { return !e.unanswerable; });
    if (answerable) ++report.answerable_query_count;
    for (auto& m : report.at_k) {
      if (result.ranked.size() < std::min(m.k, n_references)) {
        throw std::invalid_argument(fmt::format("metrics: query {} has {} ranks, fewer than k={}", result.query,
                                                result.ranked.size(), m.k));
      }
      if (relevant.empty()) continue;
      const auto depth = std::min(m.k, result.ranked.size());
      std::size_t hits = 0;
      double ap = 0;
      for (std::size_t i = 0; i < depth; ++i) {
        if (std::binary_search(relevant.begin(), relevant.end(), result.ranked[i].reference)) {
          ++hits;
          ap += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
      }
      m.recall += hits > 0 ? 1.0 : 0.0;
      m.precision += static_cast<double>(hits) / static_cast<double>(m.k);
      m.map += ap / static_cast<double>(std::min(relevant.size(), m.k));
    }
  }
  if (!results.empty()) {
    const auto n = static_cast<double>(results.size());
    for (auto& m : report.at_k) {
      m.recall /= n;
      m.precision /= n;
      m.map /= n;
    }
  }
  return report;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double score_correlation(std::span<const double> xs, std::span<const double> ys, CorrelationKind kind) {
  if (xs.size() != ys.size()) throw std::invalid_argument("correlation: length mismatch");
  if (xs.size() < 3) throw std::invalid_argument("correlation: need at least 3 points");
  if (kind == CorrelationKind::kSpearman) {
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    return score_correlation(rx, ry, CorrelationKind::kPearson);
  }
  const Eigen::Map<const Eigen::ArrayXd> x(xs.data(), static_cast<Eigen::Index>(xs.size()));
  const Eigen::Map<const Eigen::ArrayXd> y(ys.data(), static_cast<Eigen::Index>(ys.size()));
  const Eigen::ArrayXd dx = x - x.mean();
  const Eigen::ArrayXd dy = y - y.mean();
  const double sxx = dx.square().sum();
  const double syy = dy.square().sum();
  if (sxx == 0 || syy == 0) throw std::invalid_argument("correlation: undefined for constant input");
  return std::clamp((dx * dy).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

nlohmann::json report_json(const MetricsReport& report) {
  nlohmann::json j;
  j["query_count"] = report.query_count;
  j["answerable_query_count"] = report.answerable_query_count;
  std::vector<std::size_t> ks;
  nlohmann::json recall = nlohmann::json::object(), precision = nlohmann::json::object(),
                 map = nlohmann::json::object();
  for (const auto& m : report.at_k) {
    ks.push_back(m.k);
    recall[std::to_string(m.k)] = m.recall;
    precision[std::to_string(m.k)] = m.precision;
    map[std::to_string(m.k)] = m.map;
  }
  j["ks"] = ks;
  j["recall_at_k"] = recall;
  j["precision_at_k"] = precision;
  j["map_at_k"] = map;
  return j;
}

}  // namespace

std::string format_report(const MetricsReport& report, const MetricsReport* baseline) {
  auto j = report_json(report);
  if (baseline) j["baseline"] = report_json(*baseline);
  return j.dump(2) + "\n";
}

void write_report(const std::filesystem::path& path, const MetricsReport& report, const MetricsReport* baseline) {
  write_file_atomically(path, format_report(report, baseline));
}

}  // namespace confret
