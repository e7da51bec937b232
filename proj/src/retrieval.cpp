#include "confret/retrieval.hpp"

#include "confret/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace confret {

namespace {

struct Candidate {
  std::size_t reference;
  PairScore score;
};

/// Answerable first, then fused value descending, then index ascending.
bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score.unanswerable() != b.score.unanswerable()) return !a.score.unanswerable();
  if (!a.score.unanswerable() && *a.score.fused != *b.score.fused) return *a.score.fused > *b.score.fused;
  return a.reference < b.reference;
}

std::vector<RankedReference> top_k(std::vector<Candidate>& candidates, std::size_t k) {
  const auto take = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                    ranks_before);
  std::vector<RankedReference> ranked;
  ranked.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& c = candidates[i];
    ranked.push_back({c.reference, c.score.probability, c.score.unanswerable()});
  }
  return ranked;
}

void check_query(const CalibratedModel& model, const ScoreSource& source, std::size_t query, std::size_t k) {
  model.check_compatible(source.dataset().schema);
  if (query >= source.dataset().num_queries) {
    throw std::out_of_range(fmt::format("query {} out of range", query));
  }
  if (k < 1) throw std::invalid_argument("k must be at least 1");
}

}  // namespace

RetrievalResult retrieve(const CalibratedModel& model, const ScoreSource& source, std::size_t query, std::size_t k) {
  check_query(model, source, query, k);
  const auto n_refs = source.dataset().num_references;
  std::vector<Candidate> candidates;
  candidates.reserve(n_refs);
  for (std::size_t r = 0; r < n_refs; ++r) candidates.push_back({r, score_pair(model, source, query, r)});
  return {query, top_k(candidates, k), n_refs};
}

RetrievalResult retrieve_shortlist(const CalibratedModel& model, const ScoreSource& source, std::size_t query,
                                   std::size_t k, std::size_t alpha) {
  check_query(model, source, query, k);
  if (alpha < 1) throw std::invalid_argument("shortlist alpha must be at least 1");
  const auto& dataset = source.dataset();
  const auto n_refs = dataset.num_references;
  const auto pool = alpha * k;

  std::vector<bool> answerable(n_refs, false);
  std::vector<std::size_t> shortlist;
  for (const auto& pair : model.fitted_pairs()) {
    if (!dataset.query_has(query, pair.query)) continue;
    std::vector<std::pair<Scalar, std::size_t>> scored;
    for (std::size_t r = 0; r < n_refs; ++r) {
      if (!dataset.reference_has(r, pair.reference)) continue;
      answerable[r] = true;
      scored.emplace_back(source.score(pair, query, r), r);
    }
    const auto take = std::min(pool, scored.size());
    auto by_score = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
    std::nth_element(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), by_score);
    for (std::size_t i = 0; i < take; ++i) shortlist.push_back(scored[i].second);
  }
  std::sort(shortlist.begin(), shortlist.end());
  shortlist.erase(std::unique(shortlist.begin(), shortlist.end()), shortlist.end());

  std::vector<Candidate> candidates;
  candidates.reserve(shortlist.size());
  for (auto r : shortlist) candidates.push_back({r, score_pair(model, source, query, r)});
  RetrievalResult result{query, top_k(candidates, k), shortlist.size()};

  // Orphaned references only pad the list when the answerable ones run out.
  for (std::size_t r = 0; r < n_refs && result.ranked.size() < k; ++r) {
    if (!answerable[r]) result.ranked.push_back({r, 0, true});
  }
  return result;
}

std::vector<RetrievalResult> batch_retrieve(const CalibratedModel& model, const ScoreSource& source,
                                            std::span<const std::size_t> query_ids, std::size_t k,
                                            RetrievalMode mode, unsigned workers) {
  model.check_compatible(source.dataset().schema);
  std::vector<RetrievalResult> results(query_ids.size());
  parallel_for(query_ids.size(), workers, [&](std::size_t i) {
    results[i] = mode.shortlist_alpha == 0 ? retrieve(model, source, query_ids[i], k)
                                           : retrieve_shortlist(model, source, query_ids[i], k, mode.shortlist_alpha);
  });
  return results;
}

std::string format_results(std::span<const RetrievalResult> results) {
  std::string out = "query_id,rank,reference_id,probability,unanswerable\n";
  for (const auto& result : results) {
    for (std::size_t i = 0; i < result.ranked.size(); ++i) {
      const auto& entry = result.ranked[i];
      out += fmt::format("{},{},{},{:.17g},{}\n", result.query, i + 1, entry.reference, entry.probability,
                         entry.unanswerable ? 1 : 0);
    }
  }
  return out;
}

void write_results(const std::filesystem::path& path, std::span<const RetrievalResult> results) {
  write_file_atomically(path, format_results(results));
}

std::vector<RetrievalResult> read_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: missing file", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != "query_id,rank,reference_id,probability,unanswerable") {
    throw FormatError(fmt::format("{}: unexpected header", path.string()));
  }
  std::vector<RetrievalResult> results;
  std::map<std::size_t, std::size_t> slot;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string query, rank, reference, probability, flag, extra;
    if (!std::getline(fields, query, ',') || !std::getline(fields, rank, ',') ||
        !std::getline(fields, reference, ',') || !std::getline(fields, probability, ',') ||
        !std::getline(fields, flag, ',') || std::getline(fields, extra, ',')) {
      throw FormatError(fmt::format("{}:{}: expected 5 fields", path.string(), line_no));
    }
    auto to_index = [&](const std::string& s) {
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError(fmt::format("{}:{}: bad integer '{}'", path.string(), line_no, s));
      }
      return v;
    };
    const auto q = to_index(query);
    const auto rank_value = to_index(rank);
    auto [it, inserted] = slot.try_emplace(q, results.size());
    if (inserted) results.push_back({q, {}, 0});
    auto& result = results[it->second];
    if (rank_value != result.ranked.size() + 1) {
      throw FormatError(fmt::format("{}:{}: ranks for query {} are not consecutive", path.string(), line_no, q));
    }
    Scalar p = 0;
    try {
      p = std::stod(probability);
    } catch (const std::exception&) {
      throw FormatError(fmt::format("{}:{}: bad probability '{}'", path.string(), line_no, probability));
    }
    if (flag != "0" && flag != "1") {
      throw FormatError(fmt::format("{}:{}: unanswerable must be 0 or 1", path.string(), line_no));
    }
    result.ranked.push_back({to_index(reference), p, flag == "1"});
  }
  return results;
}

}  // namespace confret
