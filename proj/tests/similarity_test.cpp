#include "confret/similarity.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace confret;
using confret::testing::random_dataset;

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 0)), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)), 0.0);
  EXPECT_NEAR(cosine_similarity(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 0)), std::sqrt(0.5), 1e-15);
}

TEST(Cosine, ZeroNormScoresZero) {
  bool degenerate = false;
  EXPECT_EQ(cosine_similarity(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
}

TEST(Cosine, SymmetricScaleInvariantAndBounded) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> scale(0.01, 100);
  for (int t = 0; t < 1000; ++t) {
    Eigen::VectorXd u(8), v(8);
    for (int i = 0; i < 8; ++i) {
      u[i] = normal(rng);
      v[i] = normal(rng);
    }
    const double s = cosine_similarity(u, v);
    EXPECT_EQ(s, cosine_similarity(v, u));
    EXPECT_NEAR(cosine_similarity((scale(rng) * u).eval(), v), s, 1e-14);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
  const Eigen::Vector3d w(0.1, 0.2, 0.3);
  EXPECT_LE(cosine_similarity(w, w), 1.0);
}

TEST(SimilarityMatrix, SingleObservedEntry) {
  // Query has only its first modality, reference only its second.
  auto d = random_dataset(1, 1, 2, 2, 2, 1);
  d.embeddings[0].query.at(0).row(0) << 1.0, 0.0;
  d.embeddings[0].reference.at(1).row(0) << 0.7, std::sqrt(1 - 0.49);
  d.query_mask << 1, 0;
  d.reference_mask << 0, 1;
  const auto sim = similarity_matrix(d, 0, 0);
  EXPECT_EQ(sim.observed_count(), 1u);
  EXPECT_TRUE(sim.observed(0, 1));
  EXPECT_NEAR(sim.values(0, 1), 0.7, 1e-15);
  EXPECT_EQ(sim.values(0, 0), -1.0);
  EXPECT_EQ(sim.values(1, 0), -1.0);
  EXPECT_EQ(sim.values(1, 1), -1.0);
}

TEST(SimilarityMatrix, FullyObservedAndEmpty) {
  auto d = random_dataset(2, 2, 3, 2, 4, 2);
  EXPECT_EQ(similarity_matrix(d, 0, 1).observed_count(), 6u);
  d.query_mask.row(1).setZero();
  const auto empty = similarity_matrix(d, 1, 0);
  EXPECT_EQ(empty.observed_count(), 0u);
  EXPECT_TRUE((empty.values.array() == -1.0).all());
}

TEST(SimilarityMatrix, UncoveredPairsStayUnobserved) {
  MultimodalDataset d = random_dataset(2, 2, 2, 2, 3, 3);
  d.schema = ModalitySchema({"q0", "q1"}, {"r0", "r1"}, {{"shared", 3, {0, 1}, {0}}});
  d.embeddings[0].reference.erase(1);
  validate(d);
  const auto sim = similarity_matrix(d, 0, 0);
  EXPECT_EQ(sim.observed_count(), 2u);
  EXPECT_FALSE(sim.observed(0, 1));
}

TEST(SimilarityMatrix, SourceAndScalarPathsAgree) {
  const auto d = random_dataset(5, 7, 2, 3, 6, 4);
  const CosineScores source(d);
  for (std::size_t q = 0; q < 5; ++q) {
    for (std::size_t r = 0; r < 7; ++r) {
      const auto a = similarity_matrix(d, q, r);
      const auto b = similarity_matrix(source, q, r);
      EXPECT_EQ(a.values, b.values);
      EXPECT_TRUE((a.observed == b.observed).all());
    }
  }
}

TEST(ScoreTable, OneByOneMatchesScalarPath) {
  const auto d = random_dataset(3, 3, 1, 1, 5, 5);
  const std::vector<std::size_t> q{2}, r{1};
  const auto table = pairwise_score_table(d, {0, 0}, q, r);
  EXPECT_EQ(table.values(0, 0), similarity_matrix(d, 2, 1).values(0, 0));
}

TEST(ScoreTable, BulkMatchesScalarRecomputation) {
  auto d = random_dataset(50, 80, 2, 2, 16, 6);
  std::mt19937_64 rng(6);
  std::bernoulli_distribution present(0.8);
  for (Eigen::Index i = 0; i < d.query_mask.size(); ++i) d.query_mask.data()[i] = present(rng);
  for (Eigen::Index i = 0; i < d.reference_mask.size(); ++i) d.reference_mask.data()[i] = present(rng);
  std::vector<std::size_t> qs(50), rs(80);
  std::iota(qs.begin(), qs.end(), 0);
  std::iota(rs.begin(), rs.end(), 0);
  for (const auto& pair : d.schema.scoreable_pairs()) {
    const auto table = pairwise_score_table(d, pair, qs, rs, 3);
    for (std::size_t a = 0; a < qs.size(); ++a) {
      for (std::size_t b = 0; b < rs.size(); ++b) {
        const auto sim = similarity_matrix(d, qs[a], rs[b]);
        const auto i = static_cast<Eigen::Index>(pair.query), j = static_cast<Eigen::Index>(pair.reference);
        const auto ai = static_cast<Eigen::Index>(a), bi = static_cast<Eigen::Index>(b);
        ASSERT_EQ(table.observed(ai, bi), sim.observed(i, j));
        ASSERT_EQ(table.values(ai, bi), sim.values(i, j));
      }
    }
  }
}

TEST(ScoreTable, MaskedReferenceEmptiesColumn) {
  auto d = random_dataset(4, 3, 1, 2, 4, 7);
  d.reference_mask(1, 1) = 0;
  const std::vector<std::size_t> qs{0, 1, 2, 3}, rs{0, 1, 2};
  const auto table = pairwise_score_table(d, {0, 1}, qs, rs);
  EXPECT_FALSE(table.observed.col(1).any());
  EXPECT_TRUE(table.observed.col(0).all());
}

TEST(ScoreTable, UnscoreablePairRejected) {
  MultimodalDataset d = random_dataset(2, 2, 1, 2, 3, 8);
  d.schema = ModalitySchema({"q0"}, {"r0", "r1"}, {{"shared", 3, {0}, {0}}});
  d.embeddings[0].reference.erase(1);
  const std::vector<std::size_t> ids{0, 1};
  EXPECT_THROW(pairwise_score_table(d, {0, 1}, ids, ids), std::invalid_argument);
}
