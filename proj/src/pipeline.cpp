#include "confret/pipeline.hpp"

#include "confret/parallel.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iterator>
#include <random>

namespace confret {

std::string to_string(FuserKind fuser) { return fuser == FuserKind::kMean ? "mean" : "max"; }

FuserKind parse_fuser(const std::string& name) {
  if (name == "mean") return FuserKind::kMean;
  if (name == "max") return FuserKind::kMax;
  throw std::invalid_argument(fmt::format("unknown fuser '{}' (expected mean|max)", name));
}

CalibratedModel::CalibratedModel(ModalitySchema schema, FuserKind fuser, std::vector<std::optional<Band>> first_stage,
                                 Band second_stage, std::vector<std::size_t> calibration_queries)
    : schema_(std::move(schema)),
      fingerprint_(schema_.fingerprint()),
      fuser_(fuser),
      first_stage_(std::move(first_stage)),
      second_stage_(std::move(second_stage)),
      calibration_queries_(std::move(calibration_queries)) {
  const auto n = schema_.num_reference_modalities();
  if (first_stage_.size() != schema_.num_query_modalities() * n) {
    throw std::invalid_argument("calibrated model: first-stage grid does not match the schema");
  }
  for (std::size_t i = 0; i < first_stage_.size(); ++i) {
    if (first_stage_[i] && !schema_.scoreable({i / n, i % n})) {
      throw std::invalid_argument("calibrated model: band for an unscoreable pair");
    }
  }
}

const Band* CalibratedModel::first_stage(const ModalityPair& pair) const {
  const auto n = schema_.num_reference_modalities();
  if (pair.query >= schema_.num_query_modalities() || pair.reference >= n) return nullptr;
  const auto& band = first_stage_[pair.query * n + pair.reference];
  return band ? &*band : nullptr;
}

std::vector<ModalityPair> CalibratedModel::fitted_pairs() const {
  std::vector<ModalityPair> pairs;
  for (const auto& pair : schema_.scoreable_pairs()) {
    if (first_stage(pair)) pairs.push_back(pair);
  }
  return pairs;
}

void CalibratedModel::check_compatible(const ModalitySchema& schema) const {
  if (schema.fingerprint() != fingerprint_) {
    throw MismatchError(fmt::format("model schema fingerprint {} does not match dataset schema {}", fingerprint_,
                                    schema.fingerprint()));
  }
}

std::vector<CalibrationPair> build_calibration_pairs(const ScoreSource& source,
                                                     std::span<const std::size_t> calibration_query_ids,
                                                     const ModalityPair& pair, const std::vector<bool>* keep) {
  const auto& dataset = source.dataset();
  if (!dataset.schema.scoreable(pair)) {
    throw std::invalid_argument(fmt::format("pair {}:{} is not scoreable", pair.query, pair.reference));
  }
  const auto n_refs = dataset.num_references;
  std::vector<CalibrationPair> pairs;
  for (std::size_t a = 0; a < calibration_query_ids.size(); ++a) {
    const auto q = calibration_query_ids[a];
    if (!dataset.query_has(q, pair.query)) continue;
    for (std::size_t r = 0; r < n_refs; ++r) {
      if (!dataset.reference_has(r, pair.reference)) continue;
      if (keep && !(*keep)[a * n_refs + r]) continue;
      pairs.push_back({source.score(pair, q, r), static_cast<std::uint8_t>(dataset.relevance.is_relevant(q, r))});
    }
  }
  return pairs;
}

namespace {

std::vector<bool> subsample_mask(const MultimodalDataset& dataset, std::span<const std::size_t> calibration_query_ids,
                                 const NegativeSubsample& subsample) {
  if (!(subsample.keep_ratio > 0 && subsample.keep_ratio <= 1)) {
    throw std::invalid_argument("negative subsample ratio must lie in (0, 1]");
  }
  const auto n_refs = dataset.num_references;
  std::vector<bool> keep(calibration_query_ids.size() * n_refs);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t a = 0; a < calibration_query_ids.size(); ++a) {
    const auto q = calibration_query_ids[a];
    std::seed_seq seq{static_cast<std::uint32_t>(subsample.seed), static_cast<std::uint32_t>(subsample.seed >> 32),
                      static_cast<std::uint32_t>(q), static_cast<std::uint32_t>(q >> 32)};
    std::mt19937_64 rng(seq);
    for (std::size_t r = 0; r < n_refs; ++r) {
      const bool drawn = unit(rng) < subsample.keep_ratio;
      keep[a * n_refs + r] = drawn || dataset.relevance.is_relevant(q, r);
    }
  }
  return keep;
}

}  // namespace

CalibratedModel fit_model(const ScoreSource& source, std::span<const std::size_t> calibration_query_ids,
                          const FitOptions& options) {
  const auto& dataset = source.dataset();
  const auto& schema = dataset.schema;
  if (calibration_query_ids.size() < 2) throw std::invalid_argument("fit_model: need at least 2 calibration queries");
  for (auto q : calibration_query_ids) {
    if (q >= dataset.num_queries) throw std::out_of_range(fmt::format("fit_model: query {} out of range", q));
  }

  std::vector<bool> keep;
  if (options.negative_subsample) keep = subsample_mask(dataset, calibration_query_ids, *options.negative_subsample);
  const std::vector<bool>* keep_ptr = options.negative_subsample ? &keep : nullptr;

  // Stage one: an independent band per scoreable pair.
  const auto pairs = schema.scoreable_pairs();
  const auto n = schema.num_reference_modalities();
  std::vector<std::optional<Band>> bands(schema.num_query_modalities() * n);
  parallel_for(pairs.size(), options.workers, [&](std::size_t i) {
    const auto calibration = build_calibration_pairs(source, calibration_query_ids, pairs[i], keep_ptr);
    if (calibration.size() < 2) return;
    try {
      bands[pairs[i].query * n + pairs[i].reference] = fit_band(calibration);
    } catch (const std::invalid_argument&) {
      // All scores equal: no usable normalizer, so the pair stays unfitted.
    }
  });
  if (std::none_of(bands.begin(), bands.end(), [](const auto& b) { return b.has_value(); })) {
    throw std::invalid_argument("fit_model: no modality pair has enough calibration data");
  }

  // Stage two reuses the same calibration pairs, fused through stage one.
  const std::vector<std::size_t> ids(calibration_query_ids.begin(), calibration_query_ids.end());
  const Band placeholder(0, 1, {0});
  const CalibratedModel stage_one(schema, options.fuser, bands, placeholder);
  std::vector<std::vector<CalibrationPair>> per_query(ids.size());
  parallel_for(ids.size(), options.workers, [&](std::size_t a) {
    const auto q = ids[a];
    for (std::size_t r = 0; r < dataset.num_references; ++r) {
      if (keep_ptr && !keep[a * dataset.num_references + r]) continue;
      const auto fused = fuse(conformal_matrix(stage_one, similarity_matrix(source, q, r)), options.fuser);
      if (!fused) continue;
      per_query[a].push_back({*fused, static_cast<std::uint8_t>(dataset.relevance.is_relevant(q, r))});
    }
  });
  std::vector<CalibrationPair> fused_pairs;
  for (auto& chunk : per_query) fused_pairs.insert(fused_pairs.end(), chunk.begin(), chunk.end());
  if (fused_pairs.size() < 2) throw std::invalid_argument("fit_model: fewer than 2 answerable calibration pairs");
  std::optional<Band> second;
  try {
    second = fit_band(fused_pairs);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(fmt::format("fit_model: second-stage degenerate range ({})", e.what()));
  }
  return CalibratedModel(schema, options.fuser, std::move(bands), std::move(*second), ids);
}

ConformalMatrix conformal_matrix(const CalibratedModel& model, const SimilarityMatrix& sim) {
  ConformalMatrix conf{Matrix::Constant(sim.values.rows(), sim.values.cols(), -1),
                       BoolGrid::Constant(sim.values.rows(), sim.values.cols(), false)};
  for (Eigen::Index j = 0; j < sim.values.rows(); ++j) {
    for (Eigen::Index k = 0; k < sim.values.cols(); ++k) {
      if (!sim.observed(j, k)) continue;
      const Band* band = model.first_stage({static_cast<std::size_t>(j), static_cast<std::size_t>(k)});
      if (!band) continue;
      conf.values(j, k) = conformal_probability(*band, sim.values(j, k));
      conf.observed(j, k) = true;
    }
  }
  return conf;
}

std::optional<Scalar> fuse(const ConformalMatrix& conf, FuserKind fuser) {
  Scalar acc = 0;
  std::size_t count = 0;
  for (Eigen::Index j = 0; j < conf.values.rows(); ++j) {
    for (Eigen::Index k = 0; k < conf.values.cols(); ++k) {
      if (!conf.observed(j, k)) continue;
      const Scalar v = conf.values(j, k);
      if (fuser == FuserKind::kMean) {
        acc += v;
      } else {
        acc = count == 0 ? v : std::max(acc, v);
      }
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return fuser == FuserKind::kMean ? acc / static_cast<Scalar>(count) : acc;
}

PairScore score_pair(const CalibratedModel& model, const ScoreSource& source, std::size_t query,
                     std::size_t reference) {
  const auto fused = fuse(conformal_matrix(model, similarity_matrix(source, query, reference)), model.fuser());
  if (!fused) return {};
  return {conformal_probability(model.second_stage(), *fused), fused};
}

// Model file.

ModelDocument to_document(const CalibratedModel& model) {
  const auto& schema = model.schema();
  std::vector<FirstStageEntry> entries;
  for (const auto& pair : model.fitted_pairs()) {
    entries.push_back({schema.query_modalities()[pair.query], schema.reference_modalities()[pair.reference],
                       schema.spaces()[*schema.space_for(pair)].name, *model.first_stage(pair)});
  }
  return {model.schema_fingerprint(), model.fuser(), std::move(entries), model.second_stage(),
          model.calibration_queries()};
}

CalibratedModel from_document(const ModelDocument& document, const ModalitySchema& schema) {
  if (document.schema_fingerprint != schema.fingerprint()) {
    throw MismatchError(fmt::format("model schema fingerprint {} does not match dataset schema {}",
                                    document.schema_fingerprint, schema.fingerprint()));
  }
  const auto n = schema.num_reference_modalities();
  std::vector<std::optional<Band>> bands(schema.num_query_modalities() * n);
  for (const auto& entry : document.first_stage) {
    const auto j = schema.query_modality_index(entry.query_modality);
    const auto k = schema.reference_modality_index(entry.reference_modality);
    if (!j || !k) {
      throw MismatchError(fmt::format("model pair {}:{} is not in the dataset schema", entry.query_modality,
                                      entry.reference_modality));
    }
    const auto space = schema.space_for({*j, *k});
    if (!space || schema.spaces()[*space].name != entry.space) {
      throw MismatchError(fmt::format("model pair {}:{} is scored in space '{}' but the dataset disagrees",
                                      entry.query_modality, entry.reference_modality, entry.space));
    }
    bands[*j * n + *k] = entry.band;
  }
  return CalibratedModel(schema, document.fuser, std::move(bands), document.second_stage,
                         document.calibration_queries);
}

namespace {

std::string real(Scalar x) { return fmt::format("{:.17g}", x); }

std::string band_fields(const Band& band, const std::string& indent) {
  std::string gammas;
  for (std::size_t i = 0; i < band.sorted_gamma().size(); ++i) {
    if (i) gammas += ", ";
    gammas += real(band.sorted_gamma()[i]);
  }
  return fmt::format("{0}\"theta_min\": {1},\n{0}\"theta_max\": {2},\n{0}\"sorted_gamma\": [{3}]", indent,
                     real(band.theta_min()), real(band.theta_max()), gammas);
}

Band parse_band(const nlohmann::json& j) {
  try {
    return Band(j.at("theta_min").get<Scalar>(), j.at("theta_max").get<Scalar>(),
                j.at("sorted_gamma").get<std::vector<Scalar>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("model: malformed band: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw FormatError(fmt::format("model: invalid band: {}", e.what()));
  }
}

}  // namespace

std::string serialize_model(const ModelDocument& document) {
  using nlohmann::json;
  std::string out = "{\n";
  out += "  \"version\": 1,\n";
  out += fmt::format("  \"schema_fingerprint\": {},\n", json(document.schema_fingerprint).dump());
  out += fmt::format("  \"fuser\": \"{}\",\n", to_string(document.fuser));
  out += fmt::format("  \"calibration_queries\": {},\n", json(document.calibration_queries).dump());
  out += "  \"first_stage\": [";
  for (std::size_t i = 0; i < document.first_stage.size(); ++i) {
    const auto& e = document.first_stage[i];
    out += i ? ",\n    {\n" : "\n    {\n";
    out += fmt::format("      \"query_modality\": {},\n", json(e.query_modality).dump());
    out += fmt::format("      \"reference_modality\": {},\n", json(e.reference_modality).dump());
    out += fmt::format("      \"space\": {},\n", json(e.space).dump());
    out += band_fields(e.band, "      ") + "\n    }";
  }
  out += document.first_stage.empty() ? "],\n" : "\n  ],\n";
  out += "  \"second_stage\": {\n" + band_fields(document.second_stage, "    ") + "\n  }\n}\n";
  return out;
}

ModelDocument parse_model(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("model: invalid JSON: {}", e.what()));
  }
  try {
    if (j.at("version").get<int>() != 1) throw FormatError("model: unsupported version");
    std::vector<FirstStageEntry> entries;
    for (const auto& e : j.at("first_stage")) {
      entries.push_back({e.at("query_modality").get<std::string>(), e.at("reference_modality").get<std::string>(),
                         e.at("space").get<std::string>(), parse_band(e)});
    }
    std::vector<std::size_t> calibration_queries;
    if (j.contains("calibration_queries")) {
      calibration_queries = j.at("calibration_queries").get<std::vector<std::size_t>>();
    }
    FuserKind fuser;
    try {
      fuser = parse_fuser(j.at("fuser").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw FormatError(fmt::format("model: {}", e.what()));
    }
    return {j.at("schema_fingerprint").get<std::string>(), fuser, std::move(entries), parse_band(j.at("second_stage")),
            std::move(calibration_queries)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("model: missing or malformed field: {}", e.what()));
  }
}

void save_model(const CalibratedModel& model, const std::filesystem::path& path) {
  write_file_atomically(path, serialize_model(to_document(model)));
}

ModelDocument load_model_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: missing file", path.string()));
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return parse_model(text);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

CalibratedModel load_model(const std::filesystem::path& path, const ModalitySchema& schema) {
  return from_document(load_model_document(path), schema);
}

}  // namespace confret
