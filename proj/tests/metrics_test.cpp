#include "confret/metrics.hpp"

#include "support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <random>

using namespace confret;

namespace {

RelevanceMap relevance(std::vector<std::vector<std::size_t>> sets) { return RelevanceMap(std::move(sets)); }

RetrievalResult ranking(std::size_t query, std::initializer_list<std::size_t> refs) {
  RetrievalResult r{query, {}, refs.size()};
  for (auto ref : refs) r.ranked.push_back({ref, 0.5, false});
  return r;
}

}  // namespace

TEST(RankingMetrics, SingleHitAtTop) {
  const std::vector<RetrievalResult> results{ranking(0, {2, 0, 1})};
  const std::array<std::size_t, 1> ks{1};
  const auto report = ranking_metrics(results, relevance({{2}}), ks, 3);
  EXPECT_EQ(report.at(1).recall, 1.0);
  EXPECT_EQ(report.at(1).precision, 1.0);
  EXPECT_EQ(report.at(1).map, 1.0);
}

TEST(RankingMetrics, HitAtThreeAndMiss) {
  const std::vector<RetrievalResult> results{ranking(0, {4, 5, 1, 6, 7}), ranking(1, {0, 2, 3, 4, 5})};
  const std::array<std::size_t, 1> ks{5};
  const auto report = ranking_metrics(results, relevance({{1}, {9}}), ks, 10);
  EXPECT_EQ(report.at(5).recall, 0.5);
  EXPECT_DOUBLE_EQ(report.at(5).map, (1.0 / 3.0) / 2);
  EXPECT_DOUBLE_EQ(report.at(5).precision, 0.1);
}

TEST(RankingMetrics, EnumerationFixture) {
  // Hand enumeration: k=1 -> recall 2/5, precision 2/5, mAP 2/5;
  // k=5 -> recall 3/5, precision 6/25, mAP (1 + 1/2 + 0 + (1 + 2/3 + 0.6)/3 + 0) / 5 = 203/450.
  const std::vector<RetrievalResult> results{ranking(0, {2, 0, 1, 3, 4}), ranking(1, {0, 1, 2, 3, 4}),
                                             ranking(2, {0, 1, 2, 3, 4}), ranking(3, {5, 3, 4, 1, 0}),
                                             ranking(4, {0, 1, 2, 4, 5})};
  const auto relevant = relevance({{2}, {1, 3}, {}, {0, 4, 5}, {3}});
  const std::array<std::size_t, 2> ks{1, 5};
  const auto report = ranking_metrics(results, relevant, ks, 6);
  EXPECT_DOUBLE_EQ(report.at(1).recall, 2.0 / 5);
  EXPECT_DOUBLE_EQ(report.at(1).precision, 2.0 / 5);
  EXPECT_DOUBLE_EQ(report.at(1).map, 2.0 / 5);
  EXPECT_DOUBLE_EQ(report.at(5).recall, 3.0 / 5);
  EXPECT_DOUBLE_EQ(report.at(5).precision, 6.0 / 25);
  EXPECT_DOUBLE_EQ(report.at(5).map, 203.0 / 450);
  EXPECT_EQ(report.query_count, 5u);
  EXPECT_EQ(report.answerable_query_count, 5u);
}

TEST(RankingMetrics, UnanswerableQueriesCountAsMisses) {
  RetrievalResult orphan{0, {}, 0};
  for (std::size_t r = 0; r < 3; ++r) orphan.ranked.push_back({r, 0, true});
  const std::vector<RetrievalResult> results{orphan, ranking(1, {1, 0, 2})};
  const std::array<std::size_t, 1> ks{3};
  const auto report = ranking_metrics(results, relevance({{5}, {1}}), ks, 6);
  EXPECT_EQ(report.answerable_query_count, 1u);
  EXPECT_EQ(report.at(3).recall, 0.5);
}

TEST(RankingMetrics, ShortRankingRejected) {
  const std::vector<RetrievalResult> results{ranking(0, {1, 2})};
  const std::array<std::size_t, 1> ks{5};
  EXPECT_THROW(ranking_metrics(results, relevance({{1}}), ks, 10), std::invalid_argument);
  // A full ranking of a small reference set is long enough.
  EXPECT_NO_THROW(ranking_metrics(results, relevance({{1}}), ks, 2));
}

TEST(RankingMetrics, RecallGrowsWithKAndIgnoresQueryOrder) {
  std::mt19937_64 rng(1);
  std::vector<RetrievalResult> results;
  std::vector<std::vector<std::size_t>> sets;
  for (std::size_t q = 0; q < 50; ++q) {
    std::vector<std::size_t> refs(30);
    std::iota(refs.begin(), refs.end(), 0);
    std::shuffle(refs.begin(), refs.end(), rng);
    RetrievalResult r{q, {}, 30};
    for (auto ref : refs) r.ranked.push_back({ref, 0.5, false});
    results.push_back(r);
    sets.push_back({refs[q % 30] % 30, (q * 7) % 30});
    std::sort(sets.back().begin(), sets.back().end());
    sets.back().erase(std::unique(sets.back().begin(), sets.back().end()), sets.back().end());
  }
  const RelevanceMap relevant(sets);
  const std::array<std::size_t, 5> ks{1, 3, 5, 10, 30};
  const auto report = ranking_metrics(results, relevant, ks, 30);
  for (std::size_t i = 1; i < ks.size(); ++i) EXPECT_GE(report.at_k[i].recall, report.at_k[i - 1].recall);
  std::shuffle(results.begin(), results.end(), rng);
  const auto shuffled = ranking_metrics(results, relevant, ks, 30);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    EXPECT_DOUBLE_EQ(shuffled.at_k[i].recall, report.at_k[i].recall);
    EXPECT_DOUBLE_EQ(shuffled.at_k[i].precision, report.at_k[i].precision);
    EXPECT_DOUBLE_EQ(shuffled.at_k[i].map, report.at_k[i].map);
  }
}

TEST(Correlation, IdentityAndReversal) {
  const std::vector<double> xs{0.3, 1.2, -0.5, 2.2, 0.9};
  EXPECT_DOUBLE_EQ(score_correlation(xs, xs, CorrelationKind::kPearson), 1.0);
  EXPECT_DOUBLE_EQ(score_correlation(xs, xs, CorrelationKind::kSpearman), 1.0);
  std::vector<double> ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = -std::exp(xs[i]);
  EXPECT_DOUBLE_EQ(score_correlation(xs, ys, CorrelationKind::kSpearman), -1.0);
}

TEST(Correlation, SpearmanRankFormula) {
  const std::vector<double> xs{1, 2, 3, 4}, ys{1, 3, 2, 4};
  // 1 - 6 * (0 + 1 + 1 + 0) / (4 * 15) = 0.8
  EXPECT_NEAR(score_correlation(xs, ys, CorrelationKind::kSpearman), 0.8, 1e-12);
}

TEST(Correlation, TiesShareAverageRanks) {
  const std::vector<double> values{3, 1, 3, 2};
  EXPECT_EQ(average_ranks(values), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Correlation, InvariantUnderMonotoneMaps) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::vector<double> xs(200), ys(200);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = normal(rng);
    ys[i] = 0.5 * xs[i] + normal(rng);
  }
  std::vector<double> affine(xs.size()), cubed(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    affine[i] = 4 * xs[i] - 2;
    cubed[i] = xs[i] * xs[i] * xs[i];
  }
  EXPECT_NEAR(score_correlation(affine, ys, CorrelationKind::kPearson),
              score_correlation(xs, ys, CorrelationKind::kPearson), 1e-12);
  EXPECT_NEAR(score_correlation(cubed, ys, CorrelationKind::kSpearman),
              score_correlation(xs, ys, CorrelationKind::kSpearman), 1e-12);
}

TEST(Correlation, UndefinedCases) {
  const std::vector<double> constant{1, 1, 1}, xs{1, 2, 3}, two{1, 2};
  EXPECT_THROW(score_correlation(constant, xs, CorrelationKind::kPearson), std::invalid_argument);
  EXPECT_THROW(score_correlation(two, two, CorrelationKind::kPearson), std::invalid_argument);
  EXPECT_THROW(score_correlation(xs, two, CorrelationKind::kSpearman), std::invalid_argument);
}

TEST(Report, JsonFields) {
  const std::vector<RetrievalResult> results{ranking(0, {2, 0, 1})};
  const std::array<std::size_t, 2> ks{1, 3};
  const auto report = ranking_metrics(results, relevance({{0}}), ks, 3);
  const auto j = nlohmann::json::parse(format_report(report, &report));
  EXPECT_EQ(j.at("query_count"), 1);
  EXPECT_EQ(j.at("ks"), nlohmann::json({1, 3}));
  EXPECT_EQ(j.at("recall_at_k").at("1"), 0.0);
  EXPECT_EQ(j.at("recall_at_k").at("3"), 1.0);
  const double map3 = j.at("map_at_k").at("3");
  EXPECT_DOUBLE_EQ(map3, 0.5);
  EXPECT_TRUE(j.contains("precision_at_k"));
  EXPECT_TRUE(j.at("baseline").contains("recall_at_k"));
}
