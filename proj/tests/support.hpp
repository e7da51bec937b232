#pragma once

#include "confret/dataset.hpp"
#include "confret/metrics.hpp"
#include "confret/pipeline.hpp"
#include "confret/retrieval.hpp"
#include "confret/similarity.hpp"
#include "confret/synthgen.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

namespace confret::testing {

/// Applies theta -> scale * theta + shift to one modality pair of a wrapped source.
class AffineScores final : public ScoreSource {
 public:
  AffineScores(const ScoreSource& inner, ModalityPair pair, Scalar scale, Scalar shift)
      : inner_(inner), pair_(pair), scale_(scale), shift_(shift) {}

  const MultimodalDataset& dataset() const override { return inner_.dataset(); }
  Scalar score(const ModalityPair& pair, std::size_t query, std::size_t reference) const override {
    const Scalar s = inner_.score(pair, query, reference);
    return pair == pair_ ? scale_ * s + shift_ : s;
  }

 private:
  const ScoreSource& inner_;
  ModalityPair pair_;
  Scalar scale_;
  Scalar shift_;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("confret_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct HoldOutRun {
  QuerySplit split;
  std::vector<RetrievalResult> results;
  MetricsReport report;
};

/// Calibrate on half of the queries, retrieve the other half, score at `ks`.
inline HoldOutRun hold_out_run(const ScoreSource& source, std::uint64_t seed, std::size_t k,
                               std::span<const std::size_t> ks, RetrievalMode mode = {},
                               FuserKind fuser = FuserKind::kMean) {
  const auto& dataset = source.dataset();
  HoldOutRun run;
  run.split = split_queries(dataset.num_queries, 0.5, seed);
  FitOptions options;
  options.fuser = fuser;
  const auto model = fit_model(source, run.split.calibration, options);
  run.results = batch_retrieve(model, source, run.split.test, k, mode);
  run.report = ranking_metrics(run.results, dataset.relevance, ks, dataset.num_references);
  return run;
}

}  // namespace confret::testing

#include <gtest/gtest.h>

#include <string_view>

namespace confret::testing {

/// Passes when `f` throws E whose message contains `needle`.
template <typename E, typename F>
::testing::AssertionResult throws_with(F&& f, std::string_view needle) {
  try {
    f();
  } catch (const E& e) {
    if (std::string_view(e.what()).find(needle) != std::string_view::npos) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "message '" << e.what() << "' lacks '" << needle << "'";
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "wrong exception type: " << e.what();
  }
  return ::testing::AssertionFailure() << "nothing thrown";
}

/// One space of dimension `dim` covering every query and reference modality.
inline ModalitySchema full_schema(std::size_t n_query_modalities, std::size_t n_reference_modalities,
                                  std::size_t dim) {
  std::vector<std::string> qn, rn;
  std::vector<std::size_t> qc, rc;
  for (std::size_t j = 0; j < n_query_modalities; ++j) {
    qn.push_back("q" + std::to_string(j));
    qc.push_back(j);
  }
  for (std::size_t k = 0; k < n_reference_modalities; ++k) {
    rn.push_back("r" + std::to_string(k));
    rc.push_back(k);
  }
  return ModalitySchema(qn, rn, {{"shared", dim, qc, rc}});
}

/// Dataset over full_schema() with seeded Gaussian embeddings, all present, no relevance.
inline MultimodalDataset random_dataset(std::size_t n_queries, std::size_t n_references, std::size_t n_qm,
                                        std::size_t n_rm, std::size_t dim, std::uint64_t seed) {
  MultimodalDataset d;
  d.schema = full_schema(n_qm, n_rm, dim);
  d.num_queries = n_queries;
  d.num_references = n_references;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto fill = [&](std::size_t rows) {
    EmbeddingMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(normal(rng));
    return m;
  };
  d.embeddings.resize(1);
  for (std::size_t j = 0; j < n_qm; ++j) d.embeddings[0].query.emplace(j, fill(n_queries));
  for (std::size_t k = 0; k < n_rm; ++k) d.embeddings[0].reference.emplace(k, fill(n_references));
  d.query_mask = PresenceMask::Ones(static_cast<Eigen::Index>(n_queries), static_cast<Eigen::Index>(n_qm));
  d.reference_mask = PresenceMask::Ones(static_cast<Eigen::Index>(n_references), static_cast<Eigen::Index>(n_rm));
  d.relevance = RelevanceMap(std::vector<std::vector<std::size_t>>(n_queries));
  return d;
}

}  // namespace confret::testing
