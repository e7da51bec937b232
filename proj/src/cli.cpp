#include "confret/cli.hpp"

#include "confret/dataset.hpp"
#include "confret/metrics.hpp"
#include "confret/pipeline.hpp"
#include "confret/retrieval.hpp"
#include "confret/similarity.hpp"
#include "confret/synthgen.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

namespace confret::cli {

namespace {

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = std::make_shared<spdlog::logger>("confret", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  return log;
}

/// Parses "name:name,name:name" into modality pairs of `schema`.
std::vector<ModalityPair> parse_priority(const std::string& text, const ModalitySchema& schema) {
  std::vector<ModalityPair> pairs;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    const auto item = text.substr(start, end - start);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument(fmt::format("baseline pair '{}' lacks ':'", item));
    const auto j = schema.query_modality_index(item.substr(0, colon));
    const auto k = schema.reference_modality_index(item.substr(colon + 1));
    if (!j || !k) throw std::invalid_argument(fmt::format("baseline pair '{}' names an unknown modality", item));
    pairs.push_back({*j, *k});
    start = end + 1;
  }
  return pairs;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    const auto item = text.substr(start, end - start);
    std::size_t used = 0;
    unsigned long value = 0;
    try {
      value = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty() || value < 1) {
      throw std::invalid_argument(fmt::format("--ks entry '{}' is not a positive integer", item));
    }
    ks.push_back(value);
    start = end + 1;
  }
  return ks;
}

struct SynthFlags {
  std::string preset = "trimodal";
  std::optional<std::size_t> queries, references, latent_dim, relevant_per_query;
  std::vector<double> noise, query_dropout, reference_dropout;
  bool keep_at_least_one = false;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthFlags& f) {
  auto config = synth_preset(f.preset);
  if (f.queries) config.n_queries = *f.queries;
  if (f.references) config.n_references = *f.references;
  if (f.latent_dim) config.latent_dim = *f.latent_dim;
  if (f.relevant_per_query) config.relevant_per_query = *f.relevant_per_query;
  if (!f.noise.empty()) config.noise_sigma = f.noise;
  if (!f.query_dropout.empty()) config.query_dropout = f.query_dropout;
  if (!f.reference_dropout.empty()) config.reference_dropout = f.reference_dropout;
  config.keep_at_least_one = f.keep_at_least_one;
  config.seed = f.seed;
  logger()->info(
      "synth preset={} queries={} references={} latent_dim={} noise=[{}] relevant_per_query={} "
      "query_dropout=[{}] reference_dropout=[{}] keep_at_least_one={} seed={} out={}",
      f.preset, config.n_queries, config.n_references, config.latent_dim, fmt::join(config.noise_sigma, ","),
      config.relevant_per_query, fmt::join(config.query_dropout, ","), fmt::join(config.reference_dropout, ","),
      config.keep_at_least_one, config.seed, f.out);
  const auto dataset = generate(config);
  const auto manifest = write_dataset(dataset, f.out);
  logger()->info("wrote {}", manifest.string());
  return kSuccess;
}

struct CalibrateFlags {
  std::string data;
  double cal_fraction = 0.5;
  std::string fuser = "mean";
  std::uint64_t seed = 0;
  std::optional<double> negative_subsample;
  std::string out;
  unsigned workers = 1;
};

int run_calibrate(const CalibrateFlags& f) {
  logger()->info("calibrate data={} cal_fraction={} fuser={} seed={} negative_subsample={} out={} workers={}", f.data,
                 f.cal_fraction, f.fuser, f.seed,
                 f.negative_subsample ? fmt::format("{}", *f.negative_subsample) : std::string("off"), f.out,
                 f.workers);
  FitOptions options;
  options.fuser = parse_fuser(f.fuser);
  options.workers = f.workers;
  if (f.negative_subsample) {
    if (!(*f.negative_subsample > 0 && *f.negative_subsample <= 1)) {
      throw std::invalid_argument("--negative-subsample must lie in (0, 1]");
    }
    options.negative_subsample = NegativeSubsample{*f.negative_subsample, f.seed};
  }
  const auto dataset = load_dataset(f.data);
  const auto split = split_queries(dataset.num_queries, f.cal_fraction, f.seed);
  const CosineScores source(dataset);
  const auto model = fit_model(source, split.calibration, options);
  logger()->info("fitted {} first-stage bands on {} calibration queries; second stage has {} scores",
                 model.fitted_pairs().size(), split.calibration.size(), model.second_stage().size());
  save_model(model, f.out);
  return kSuccess;
}

struct RetrieveFlags {
  std::string data, model, out;
  std::size_t k = 20;
  std::size_t shortlist_alpha = 0;
  unsigned workers = 1;
  bool all_queries = false;
};

int run_retrieve(const RetrieveFlags& f) {
  logger()->info("retrieve data={} model={} k={} shortlist_alpha={} all_queries={} out={} workers={}", f.data,
                 f.model, f.k, f.shortlist_alpha, f.all_queries, f.out, f.workers);
  const auto dataset = load_dataset(f.data);
  const auto model = load_model(f.model, dataset.schema);
  std::vector<std::size_t> queries;
  const auto& held_out = model.calibration_queries();
  for (std::size_t q = 0; q < dataset.num_queries; ++q) {
    if (f.all_queries || !std::binary_search(held_out.begin(), held_out.end(), q)) queries.push_back(q);
  }
  if (!held_out.empty() && held_out.back() >= dataset.num_queries) {
    throw MismatchError("model calibration queries exceed the dataset's query count");
  }
  const CosineScores source(dataset);
  const auto results = batch_retrieve(model, source, queries, f.k, {f.shortlist_alpha}, f.workers);
  logger()->info("retrieved top-{} for {} queries", f.k, results.size());
  write_results(f.out, results);
  return kSuccess;
}

struct EvaluateFlags {
  std::string data, results, out;
  std::string ks = "1,5,20";
  std::string baseline;
};

int run_evaluate(const EvaluateFlags& f) {
  logger()->info("evaluate data={} results={} ks={} baseline={} out={}", f.data, f.results, f.ks,
                 f.baseline.empty() ? std::string("off") : f.baseline, f.out);
  const auto ks = parse_ks(f.ks);
  const auto dataset = load_dataset(f.data);
  const auto results = read_results(f.results);
  std::vector<std::size_t> queries;
  for (const auto& r : results) {
    if (r.query >= dataset.num_queries) {
      throw MismatchError(fmt::format("results mention query {} but the dataset has {}", r.query,
                                      dataset.num_queries));
    }
    for (const auto& e : r.ranked) {
      if (e.reference >= dataset.num_references) {
        throw MismatchError(fmt::format("results mention reference {} but the dataset has {}", e.reference,
                                        dataset.num_references));
      }
    }
    queries.push_back(r.query);
  }
  const auto report = ranking_metrics(results, dataset.relevance, ks, dataset.num_references);
  std::optional<MetricsReport> baseline;
  if (!f.baseline.empty()) {
    const auto priority = parse_priority(f.baseline, dataset.schema);
    const CosineScores source(dataset);
    baseline = heuristic_baseline(source, priority, queries, ks);
  }
  for (const auto& m : report.at_k) {
    logger()->info("k={} recall={:.4f} precision={:.4f} map={:.4f}", m.k, m.recall, m.precision, m.map);
  }
  write_report(f.out, report, baseline ? &*baseline : nullptr);
  return kSuccess;
}

void print_band(const Band& band) {
  const auto& g = band.sorted_gamma();
  auto quantile = [&](double p) {
    const auto idx = static_cast<std::size_t>(p * static_cast<double>(g.size() - 1) + 0.5);
    return g[idx];
  };
  fmt::print("  calibration scores: {}\n", band.size());
  fmt::print("  raw score range: [{:.6g}, {:.6g}]\n", band.theta_min(), band.theta_max());
  fmt::print("  gamma quantiles: min={:.4f} q10={:.4f} q50={:.4f} q90={:.4f} max={:.4f}\n", g.front(),
             quantile(0.1), quantile(0.5), quantile(0.9), g.back());
}

int run_inspect(const std::string& model_path) {
  logger()->info("inspect model={}", model_path);
  const auto doc = load_model_document(model_path);
  fmt::print("schema fingerprint: {}\n", doc.schema_fingerprint);
  fmt::print("fuser: {}\n", to_string(doc.fuser));
  fmt::print("calibration queries: {}\n", doc.calibration_queries.size());
  for (const auto& entry : doc.first_stage) {
    fmt::print("first stage {} -> {} (space {})\n", entry.query_modality, entry.reference_modality, entry.space);
    print_band(entry.band);
  }
  fmt::print("second stage\n");
  print_band(doc.second_stage);
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Two-stage conformal retrieval over multimodal data with missing modalities", "confret"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  synth_cmd->add_option("--preset", synth.preset, "trimodal | text2av | text2ts | single")->capture_default_str();
  synth_cmd->add_option("--queries", synth.queries, "Number of query instances");
  synth_cmd->add_option("--references", synth.references, "Number of reference instances");
  synth_cmd->add_option("--latent-dim", synth.latent_dim, "Latent dimension");
  synth_cmd->add_option("--noise", synth.noise, "Noise sigma per space")->delimiter(',');
  synth_cmd->add_option("--relevant-per-query", synth.relevant_per_query, "Relevant references per query");
  synth_cmd->add_option("--query-dropout", synth.query_dropout, "Drop probability per query modality")
      ->delimiter(',');
  synth_cmd->add_option("--reference-dropout", synth.reference_dropout, "Drop probability per reference modality")
      ->delimiter(',');
  synth_cmd->add_flag("--keep-at-least-one", synth.keep_at_least_one, "Never drop every modality of an instance");
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  CalibrateFlags calibrate;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit both calibration stages");
  calibrate_cmd->add_option("--data", calibrate.data, "Dataset manifest")->required();
  calibrate_cmd->add_option("--cal-fraction", calibrate.cal_fraction, "Fraction of queries used for calibration")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  calibrate_cmd->add_option("--fuser", calibrate.fuser, "mean | max")
      ->capture_default_str()
      ->check(CLI::IsMember({"mean", "max"}));
  calibrate_cmd->add_option("--seed", calibrate.seed, "Split and subsampling seed")->capture_default_str();
  calibrate_cmd->add_option("--negative-subsample", calibrate.negative_subsample,
                            "Keep each negative calibration pair with this probability");
  calibrate_cmd->add_option("--out", calibrate.out, "Model JSON path")->required();
  calibrate_cmd->add_option("--workers", calibrate.workers, "Worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  RetrieveFlags retrieve;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Rank references for held-out queries");
  retrieve_cmd->add_option("--data", retrieve.data, "Dataset manifest")->required();
  retrieve_cmd->add_option("--model", retrieve.model, "Model JSON path")->required();
  retrieve_cmd->add_option("--k", retrieve.k, "Results per query")->capture_default_str()->check(CLI::PositiveNumber);
  retrieve_cmd->add_option("--shortlist-alpha", retrieve.shortlist_alpha,
                           "Score only per-pair top alpha*k candidates (0 = exhaustive)")
      ->capture_default_str();
  retrieve_cmd->add_flag("--all-queries", retrieve.all_queries, "Include calibration queries");
  retrieve_cmd->add_option("--out", retrieve.out, "Results CSV path")->required();
  retrieve_cmd->add_option("--workers", retrieve.workers, "Worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  EvaluateFlags evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a results file against relevance");
  evaluate_cmd->add_option("--data", evaluate.data, "Dataset manifest")->required();
  evaluate_cmd->add_option("--results", evaluate.results, "Results CSV path")->required();
  evaluate_cmd->add_option("--ks", evaluate.ks, "Comma-separated cutoffs")->capture_default_str();
  evaluate_cmd->add_option("--baseline", evaluate.baseline,
                           "Heuristic pair priority, e.g. text:vision,text:audio");
  evaluate_cmd->add_option("--out", evaluate.out, "Report JSON path")->required();

  std::string inspect_model;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a fitted model");
  inspect_cmd->add_option("--model", inspect_model, "Model JSON path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cerr, std::cerr);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (calibrate_cmd->parsed()) return run_calibrate(calibrate);
    if (retrieve_cmd->parsed()) return run_retrieve(retrieve);
    if (evaluate_cmd->parsed()) return run_evaluate(evaluate);
    if (inspect_cmd->parsed()) return run_inspect(inspect_model);
  } catch (const MismatchError& e) {
    logger()->error("{}", e.what());
    return kMismatchError;
  } catch (const FormatError& e) {
    logger()->error("{}", e.what());
    return kFormatError;
  } catch (const std::invalid_argument& e) {
    logger()->error("{}", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    logger()->error("{}", e.what());
    return kFormatError;
  }
  return kUsageError;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace confret::cli
