#pragma once

#include "confret/conformal.hpp"
#include "confret/core.hpp"
#include "confret/dataset.hpp"
#include "confret/similarity.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace confret {

using Band = PredictionBand<Scalar>;
using CalibrationPair = LabeledScore<Scalar>;

enum class FuserKind { kMean, kMax };

std::string to_string(FuserKind fuser);
/// Parses "mean" / "max"; throws std::invalid_argument.
FuserKind parse_fuser(const std::string& name);

/// First-stage probabilities for one query-reference pair.
struct ConformalMatrix {
  Matrix values;
  BoolGrid observed;
};

/// Keeps every positive plus each negative with probability `keep_ratio`.
struct NegativeSubsample {
  double keep_ratio = 1.0;
  std::uint64_t seed = 0;
};

/// Two-stage calibration: one band per scoreable modality pair, then a band
/// over fused first-stage probabilities.
class CalibratedModel {
 public:
  CalibratedModel(ModalitySchema schema, FuserKind fuser, std::vector<std::optional<Band>> first_stage,
                  Band second_stage, std::vector<std::size_t> calibration_queries = {});

  const ModalitySchema& schema() const { return schema_; }
  const std::string& schema_fingerprint() const { return fingerprint_; }
  FuserKind fuser() const { return fuser_; }
  const Band& second_stage() const { return second_stage_; }
  /// Band for `pair`, or nullptr when the pair was unfittable or unscoreable.
  const Band* first_stage(const ModalityPair& pair) const;
  std::vector<ModalityPair> fitted_pairs() const;
  /// Queries used for calibration; empty when unknown.
  const std::vector<std::size_t>& calibration_queries() const { return calibration_queries_; }

  /// Throws MismatchError unless `schema` matches the one the model was fitted on.
  void check_compatible(const ModalitySchema& schema) const;

 private:
  ModalitySchema schema_;
  std::string fingerprint_;
  FuserKind fuser_;
  std::vector<std::optional<Band>> first_stage_;  // η̄×n, row-major
  Band second_stage_;
  std::vector<std::size_t> calibration_queries_;
};

/// (score, label) for every calibration query with modality j present against
/// every reference with modality k present. `keep` (optional) restricts to a
/// subsampled calibration set: keep[a * N^r + r] for calibration_query_ids[a].
std::vector<CalibrationPair> build_calibration_pairs(const ScoreSource& source,
                                                     std::span<const std::size_t> calibration_query_ids,
                                                     const ModalityPair& pair,
                                                     const std::vector<bool>* keep = nullptr);

struct FitOptions {
  FuserKind fuser = FuserKind::kMean;
  std::optional<NegativeSubsample> negative_subsample;
  unsigned workers = 1;
};

/// Fits both stages on the same calibration queries.
/// Throws std::invalid_argument when nothing is fittable or stage two is degenerate.
CalibratedModel fit_model(const ScoreSource& source, std::span<const std::size_t> calibration_query_ids,
                          const FitOptions& options = {});

ConformalMatrix conformal_matrix(const CalibratedModel& model, const SimilarityMatrix& sim);

/// Mean or max over observed entries; nullopt when nothing is observed.
std::optional<Scalar> fuse(const ConformalMatrix& conf, FuserKind fuser);

struct PairScore {
  Scalar probability = 0;
  std::optional<Scalar> fused;  // nullopt = unanswerable
  bool unanswerable() const { return !fused.has_value(); }
};

/// Final calibrated probability that `reference` is a correct retrieval for `query`.
PairScore score_pair(const CalibratedModel& model, const ScoreSource& source, std::size_t query,
                     std::size_t reference);

/// Schema-independent form of a model, as stored on disk.
struct FirstStageEntry {
  std::string query_modality;
  std::string reference_modality;
  std::string space;
  Band band;
};

struct ModelDocument {
  std::string schema_fingerprint;
  FuserKind fuser = FuserKind::kMean;
  std::vector<FirstStageEntry> first_stage;
  Band second_stage;
  std::vector<std::size_t> calibration_queries;
};

ModelDocument to_document(const CalibratedModel& model);
/// Resolves modality names against `schema`; MismatchError on any disagreement.
CalibratedModel from_document(const ModelDocument& document, const ModalitySchema& schema);

/// JSON with every real written to 17 significant digits. Throws FormatError on parse.
std::string serialize_model(const ModelDocument& document);
ModelDocument parse_model(const std::string& json_text);

void save_model(const CalibratedModel& model, const std::filesystem::path& path);
ModelDocument load_model_document(const std::filesystem::path& path);
CalibratedModel load_model(const std::filesystem::path& path, const ModalitySchema& schema);

}  // namespace confret
