#include "confret/synthgen.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace confret;
using confret::testing::hold_out_run;
using confret::testing::read_bytes;
using confret::testing::TempDir;
using confret::testing::throws_with;

namespace {

SynthConfig small_single(double sigma, std::uint64_t seed) {
  auto config = synth_preset("single");
  config.n_queries = 200;
  config.n_references = 100;
  config.noise_sigma = {sigma};
  config.seed = seed;
  return config;
}

}  // namespace

TEST(Synth, PresetsValidate) {
  for (const auto& name : synth_preset_names()) {
    EXPECT_NO_THROW(validate(synth_preset(name))) << name;
  }
  EXPECT_THROW(synth_preset("nope"), std::invalid_argument);
}

TEST(Synth, ShapeAndRelevance) {
  auto config = synth_preset("trimodal");
  config.n_queries = 40;
  config.n_references = 24;
  const auto d = generate(config);
  EXPECT_EQ(d.num_queries, 40u);
  EXPECT_EQ(d.num_references, 24u);
  EXPECT_NO_THROW(validate(d));
  for (std::size_t q = 0; q < d.num_queries; ++q) EXPECT_EQ(d.relevance.relevant(q).size(), 4u);
  for (const auto& space : d.embeddings) {
    for (const auto& [m, block] : space.query) {
      for (Eigen::Index i = 0; i < block.rows(); ++i) EXPECT_NEAR(block.row(i).norm(), 1.0, 1e-6);
    }
  }
}

TEST(Synth, NoiseFreeRetrievalIsPerfect) {
  const auto d = generate(small_single(0.0, 1));
  const CosineScores source(d);
  const std::array<std::size_t, 1> ks{1};
  EXPECT_EQ(hold_out_run(source, 1, 1, ks).report.at(1).recall, 1.0);
}

TEST(Synth, SameSeedSameBytes) {
  const TempDir a("synth_a"), b("synth_b");
  auto config = synth_preset("text2av");
  config.n_queries = 30;
  config.n_references = 20;
  config.seed = 77;
  write_dataset(generate(config), a.path());
  write_dataset(generate(config), b.path());
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(a.path())) {
    const auto name = entry.path().filename().string();
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(b / name)) << name;
    ++files;
  }
  EXPECT_GT(files, 3u);
  config.seed = 78;
  EXPECT_NE(generate(config).embeddings[0].query.at(0), generate(synth_preset("text2av")).embeddings[0].query.at(0));
}

TEST(Synth, RecallFallsAsNoiseGrows) {
  const std::array<std::size_t, 1> ks{5};
  double previous = 2.0;
  for (double sigma : {0.0, 0.3, 1.0, 3.0}) {
    double total = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto d = generate(small_single(sigma, seed));
      const CosineScores source(d);
      total += hold_out_run(source, seed, 5, ks).report.at(5).recall;
    }
    const double mean = total / 5;
    EXPECT_LE(mean, previous) << sigma;
    previous = mean;
  }
  EXPECT_LT(previous, 0.5);
}

TEST(Synth, DropoutRateWithinBinomialBand) {
  auto config = synth_preset("trimodal");
  config.n_queries = 3000;
  config.n_references = 400;
  config.query_dropout = {0.2, 0.5, 0.8};
  config.reference_dropout = {0.0, 1.0, 0.3};
  config.seed = 3;
  const auto d = generate(config);
  auto check = [](const PresenceMask& mask, const std::vector<double>& p) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      const double n = static_cast<double>(mask.rows());
      const double dropped = n - static_cast<double>(mask.col(j).cast<int>().sum());
      const double pj = p[static_cast<std::size_t>(j)];
      EXPECT_LE(std::abs(dropped - n * pj), 3 * std::sqrt(n * pj * (1 - pj)) + 1e-9) << j;
    }
  };
  check(d.query_mask, config.query_dropout);
  check(d.reference_mask, config.reference_dropout);
}

TEST(Synth, KeepAtLeastOne) {
  auto config = synth_preset("trimodal");
  config.n_queries = 500;
  config.n_references = 100;
  config.query_dropout = {0.9, 0.9, 0.9};
  config.keep_at_least_one = true;
  const auto d = generate(config);
  for (Eigen::Index i = 0; i < d.query_mask.rows(); ++i) EXPECT_TRUE(d.query_mask.row(i).any());
}

TEST(Synth, InvalidConfigsRejected) {
  auto config = synth_preset("single");
  config.noise_sigma = {0.1, 0.2};
  EXPECT_TRUE(throws_with<std::invalid_argument>([&] { validate(config); }, "noise sigmas"));
  config = synth_preset("single");
  config.noise_sigma = {-1};
  EXPECT_THROW(validate(config), std::invalid_argument);
  config = synth_preset("single");
  config.query_dropout = {1.5};
  EXPECT_THROW(validate(config), std::invalid_argument);
  config = synth_preset("single");
  config.relevant_per_query = config.n_references + 1;
  EXPECT_THROW(validate(config), std::invalid_argument);
  config = synth_preset("single");
  config.latent_dim = 0;
  EXPECT_THROW(generate(config), std::invalid_argument);
}

TEST(Heuristic, SinglePairIsRawRanking) {
  const auto d = generate(small_single(0.8, 5));
  const CosineScores source(d);
  const std::array<ModalityPair, 1> priority{ModalityPair{0, 0}};
  const std::vector<std::size_t> queries{0, 7, 42};
  const auto results = heuristic_rankings(source, priority, queries, d.num_references);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::vector<std::size_t> expected(d.num_references);
    std::iota(expected.begin(), expected.end(), 0);
    std::stable_sort(expected.begin(), expected.end(), [&](std::size_t a, std::size_t b) {
      return source.score({0, 0}, queries[i], a) > source.score({0, 0}, queries[i], b);
    });
    ASSERT_EQ(results[i].ranked.size(), expected.size());
    for (std::size_t rank = 0; rank < expected.size(); ++rank) {
      EXPECT_EQ(results[i].ranked[rank].reference, expected[rank]);
    }
  }
}

TEST(Heuristic, PriorityOrderMattersOnlyWhereBothPairsScore) {
  auto config = synth_preset("text2av");
  config.n_queries = 20;
  config.n_references = 30;
  config.seed = 6;
  auto d = generate(config);
  const CosineScores source(d);
  const std::vector<std::size_t> queries{0, 1, 2, 3};
  const std::array<ModalityPair, 2> forward{ModalityPair{0, 0}, ModalityPair{0, 1}};
  const std::array<ModalityPair, 2> backward{ModalityPair{0, 1}, ModalityPair{0, 0}};
  EXPECT_NE(format_results(heuristic_rankings(source, forward, queries, 30)),
            format_results(heuristic_rankings(source, backward, queries, 30)));
  d.reference_mask.col(0).setZero();  // no vision: only the audio pair can score
  const CosineScores audio_only(d);
  EXPECT_EQ(format_results(heuristic_rankings(audio_only, forward, queries, 30)),
            format_results(heuristic_rankings(audio_only, backward, queries, 30)));
}

TEST(Heuristic, UnscoredReferencesRankLast) {
  auto config = synth_preset("text2av");
  config.n_queries = 4;
  config.n_references = 10;
  auto d = generate(config);
  d.reference_mask.col(0).setOnes();
  d.reference_mask.topRows(3).setZero();
  const CosineScores source(d);
  const std::array<ModalityPair, 1> priority{ModalityPair{0, 0}};
  const std::vector<std::size_t> queries{0};
  const auto result = heuristic_rankings(source, priority, queries, 10).front();
  for (std::size_t rank = 7; rank < 10; ++rank) {
    EXPECT_TRUE(result.ranked[rank].unanswerable);
    EXPECT_EQ(result.ranked[rank].reference, rank - 7);
  }
}
