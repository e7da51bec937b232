#include "confret/dataset.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace confret {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kEmbeddingMagic[4] = {'A', '2', 'A', 'E'};
constexpr char kMaskMagic[4] = {'A', '2', 'A', 'M'};
constexpr std::uint16_t kFormatVersion = 1;
constexpr std::size_t kHeaderBytes = 24;

void put_le(std::vector<char>& out, std::uint64_t value, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<char>((value >> (8 * b)) & 0xFF));
}

std::uint64_t get_le(const std::vector<char>& in, std::size_t offset, int bytes) {
  std::uint64_t value = 0;
  for (int b = 0; b < bytes; ++b) {
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(b)])) << (8 * b);
  }
  return value;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("{}: missing file", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

struct Header {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
};

Header parse_header(const std::vector<char>& bytes, const char (&magic)[4], const fs::path& path,
                    std::size_t element_bytes, bool has_dtype) {
  if (bytes.size() < kHeaderBytes) throw FormatError(fmt::format("{}: truncated header", path.string()));
  if (std::memcmp(bytes.data(), magic, 4) != 0) throw FormatError(fmt::format("{}: bad magic", path.string()));
  const auto version = get_le(bytes, 4, 2);
  if (version != kFormatVersion) {
    throw FormatError(fmt::format("{}: unsupported version {}", path.string(), version));
  }
  if (has_dtype) {
    if (bytes[6] != 0) throw FormatError(fmt::format("{}: unsupported dtype {}", path.string(), int(bytes[6])));
    if (bytes[7] != 0) throw FormatError(fmt::format("{}: nonzero pad byte", path.string()));
  } else if (get_le(bytes, 6, 2) != 0) {
    throw FormatError(fmt::format("{}: nonzero pad field", path.string()));
  }
  Header header{get_le(bytes, 8, 8), get_le(bytes, 16, 8)};
  const auto payload = bytes.size() - kHeaderBytes;
  std::uint64_t expected = 0;
  if (__builtin_mul_overflow(header.rows, header.cols, &expected) ||
      __builtin_mul_overflow(expected, element_bytes, &expected)) {
    throw FormatError(fmt::format("{}: truncated payload", path.string()));
  }
  if (payload < expected) throw FormatError(fmt::format("{}: truncated payload", path.string()));
  if (payload > expected) throw FormatError(fmt::format("{}: trailing bytes after payload", path.string()));
  return header;
}

std::size_t parse_index(std::string_view token, const fs::path& path, std::size_t line, const char* field) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError(fmt::format("{}:{}: bad {} '{}'", path.string(), line, field, token));
  }
  return value;
}

double parse_real(const std::string& token, const fs::path& path, std::size_t line, const char* field) {
  try {
    std::size_t used = 0;
    double value = std::stod(token, &used);
    if (used != token.size() || !std::isfinite(value)) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("{}:{}: bad {} '{}'", path.string(), line, field, token));
  }
}

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

/// Reads a CSV with the exact header `header`; returns data rows.
std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& header) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != header) {
    throw FormatError(fmt::format("{}: expected header '{}'", path.string(), fmt::join(header, ",")));
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw FormatError(fmt::format("{}:{}: expected {} fields", path.string(), line_no, header.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

const json& require(const json& object, const char* key, const fs::path& path) {
  if (!object.is_object() || !object.contains(key)) {
    throw FormatError(fmt::format("{}: missing field '{}'", path.string(), key));
  }
  return object.at(key);
}

template <typename T>
T get_as(const json& value, const char* key, const fs::path& path) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw FormatError(fmt::format("{}: field '{}' has the wrong type", path.string(), key));
  }
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_');
  return out;
}

}  // namespace

void write_file_atomically(const fs::path& path, std::span<const char> contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("{}: cannot open for writing", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error(fmt::format("{}: write failed", tmp.string()));
  }
  fs::rename(tmp, path);
}

void write_file_atomically(const fs::path& path, const std::string& contents) {
  write_file_atomically(path, std::span<const char>(contents.data(), contents.size()));
}

EmbeddingMatrix read_embedding_file(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const auto header = parse_header(bytes, kEmbeddingMagic, path, 4, true);
  EmbeddingMatrix matrix(static_cast<Eigen::Index>(header.rows), static_cast<Eigen::Index>(header.cols));
  auto* out = matrix.data();
  for (std::size_t i = 0; i < header.rows * header.cols; ++i) {
    const auto raw = static_cast<std::uint32_t>(get_le(bytes, kHeaderBytes + 4 * i, 4));
    const auto value = std::bit_cast<float>(raw);
    if (!std::isfinite(value)) throw FormatError(fmt::format("{}: non-finite value at element {}", path.string(), i));
    out[i] = static_cast<Scalar>(value);
  }
  return matrix;
}

void write_embedding_file(const fs::path& path, const EmbeddingMatrix& matrix) {
  if (!matrix.allFinite()) throw std::invalid_argument("write_embedding_file: non-finite values");
  std::vector<char> bytes(kEmbeddingMagic, kEmbeddingMagic + 4);
  put_le(bytes, kFormatVersion, 2);
  put_le(bytes, 0, 1);  // dtype f32
  put_le(bytes, 0, 1);
  put_le(bytes, static_cast<std::uint64_t>(matrix.rows()), 8);
  put_le(bytes, static_cast<std::uint64_t>(matrix.cols()), 8);
  bytes.reserve(bytes.size() + 4 * static_cast<std::size_t>(matrix.size()));
  const auto* data = matrix.data();
  for (Eigen::Index i = 0; i < matrix.size(); ++i) {
    put_le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(data[i])), 4);
  }
  write_file_atomically(path, bytes);
}

PresenceMask read_mask_file(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const auto header = parse_header(bytes, kMaskMagic, path, 1, false);
  PresenceMask mask(static_cast<Eigen::Index>(header.rows), static_cast<Eigen::Index>(header.cols));
  for (std::size_t i = 0; i < header.rows * header.cols; ++i) {
    const auto value = static_cast<unsigned char>(bytes[kHeaderBytes + i]);
    if (value > 1) throw FormatError(fmt::format("{}: mask value {} at element {}", path.string(), int(value), i));
    mask.data()[i] = value;
  }
  return mask;
}

void write_mask_file(const fs::path& path, const PresenceMask& mask) {
  if ((mask > 1).any()) throw std::invalid_argument("write_mask_file: values other than 0/1");
  std::vector<char> bytes(kMaskMagic, kMaskMagic + 4);
  put_le(bytes, kFormatVersion, 2);
  put_le(bytes, 0, 2);
  put_le(bytes, static_cast<std::uint64_t>(mask.rows()), 8);
  put_le(bytes, static_cast<std::uint64_t>(mask.cols()), 8);
  for (Eigen::Index i = 0; i < mask.size(); ++i) bytes.push_back(static_cast<char>(mask.data()[i]));
  write_file_atomically(path, bytes);
}

std::vector<std::pair<std::size_t, std::size_t>> read_relevance_pairs(const fs::path& path) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t line = 1;
  for (const auto& row : read_csv(path, {"query_id", "reference_id"})) {
    ++line;
    pairs.emplace_back(parse_index(row[0], path, line, "query_id"), parse_index(row[1], path, line, "reference_id"));
  }
  return pairs;
}

Positions read_positions(const fs::path& path) {
  const auto rows = read_csv(path, {"id", "x", "y"});
  Positions positions(static_cast<Eigen::Index>(rows.size()), 2);
  std::vector<bool> seen(rows.size(), false);
  std::size_t line = 1;
  for (const auto& row : rows) {
    ++line;
    const auto id = parse_index(row[0], path, line, "id");
    if (id >= rows.size() || seen[id]) {
      throw FormatError(fmt::format("{}:{}: id {} out of range or repeated", path.string(), line, id));
    }
    seen[id] = true;
    positions(static_cast<Eigen::Index>(id), 0) = parse_real(row[1], path, line, "x");
    positions(static_cast<Eigen::Index>(id), 1) = parse_real(row[2], path, line, "y");
  }
  return positions;
}

MultimodalDataset load_dataset(const fs::path& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{}: invalid JSON: {}", manifest_path.string(), e.what()));
  }
  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  if (get_as<int>(require(manifest, "version", manifest_path), "version", manifest_path) != 1) {
    throw FormatError(fmt::format("{}: unsupported manifest version", manifest_path.string()));
  }
  auto query_names = get_as<std::vector<std::string>>(require(manifest, "query_modalities", manifest_path),
                                                      "query_modalities", manifest_path);
  auto reference_names = get_as<std::vector<std::string>>(require(manifest, "reference_modalities", manifest_path),
                                                          "reference_modalities", manifest_path);
  auto index_of = [&](const std::vector<std::string>& names, const std::string& name, const char* field) {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      throw FormatError(fmt::format("{}: field '{}' names unknown modality '{}'", manifest_path.string(), field, name));
    }
    return static_cast<std::size_t>(it - names.begin());
  };

  const auto& spaces_json = require(manifest, "spaces", manifest_path);
  if (!spaces_json.is_array()) throw FormatError(fmt::format("{}: field 'spaces' must be an array", manifest_path.string()));
  std::vector<SharedSpace> spaces;
  std::vector<std::map<std::size_t, fs::path>> query_paths, reference_paths;
  for (const auto& space_json : spaces_json) {
    SharedSpace space;
    space.name = get_as<std::string>(require(space_json, "name", manifest_path), "spaces.name", manifest_path);
    space.dim = get_as<std::size_t>(require(space_json, "dim", manifest_path), "spaces.dim", manifest_path);
    auto& qp = query_paths.emplace_back();
    auto& rp = reference_paths.emplace_back();
    for (const auto& [name, p] : get_as<std::map<std::string, std::string>>(
             require(space_json, "query_embeddings", manifest_path), "spaces.query_embeddings", manifest_path)) {
      const auto j = index_of(query_names, name, "spaces.query_embeddings");
      space.query_coverage.push_back(j);
      qp[j] = resolve(p);
    }
    for (const auto& [name, p] : get_as<std::map<std::string, std::string>>(
             require(space_json, "reference_embeddings", manifest_path), "spaces.reference_embeddings",
             manifest_path)) {
      const auto k = index_of(reference_names, name, "spaces.reference_embeddings");
      space.reference_coverage.push_back(k);
      rp[k] = resolve(p);
    }
    std::sort(space.query_coverage.begin(), space.query_coverage.end());
    std::sort(space.reference_coverage.begin(), space.reference_coverage.end());
    spaces.push_back(std::move(space));
  }

  std::map<ModalityPair, std::string> overrides;
  if (manifest.contains("pair_space")) {
    for (const auto& [key, space] : get_as<std::map<std::string, std::string>>(manifest.at("pair_space"), "pair_space",
                                                                              manifest_path)) {
      const auto colon = key.find(':');
      if (colon == std::string::npos) {
        throw FormatError(fmt::format("{}: pair_space key '{}' is not 'j:k'", manifest_path.string(), key));
      }
      overrides[{index_of(query_names, key.substr(0, colon), "pair_space"),
                 index_of(reference_names, key.substr(colon + 1), "pair_space")}] = space;
    }
  }

  MultimodalDataset dataset;
  try {
    dataset.schema = ModalitySchema(query_names, reference_names, spaces, overrides);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }

  // Row counts come from the first embedding file on each side.
  bool have_q = false, have_r = false;
  dataset.embeddings.resize(spaces.size());
  for (std::size_t s = 0; s < spaces.size(); ++s) {
    for (const auto& [j, p] : query_paths[s]) {
      auto mat = read_embedding_file(p);
      if (!have_q) dataset.num_queries = static_cast<std::size_t>(mat.rows());
      have_q = true;
      if (static_cast<std::size_t>(mat.rows()) != dataset.num_queries) {
        throw FormatError(fmt::format("{}: dimension mismatch: {} rows, expected {}", p.string(), mat.rows(),
                                      dataset.num_queries));
      }
      if (static_cast<std::size_t>(mat.cols()) != spaces[s].dim) {
        throw FormatError(fmt::format("{}: dimension mismatch: dim {}, space '{}' declares {}", p.string(), mat.cols(),
                                      spaces[s].name, spaces[s].dim));
      }
      dataset.embeddings[s].query.emplace(j, std::move(mat));
    }
    for (const auto& [k, p] : reference_paths[s]) {
      auto mat = read_embedding_file(p);
      if (!have_r) dataset.num_references = static_cast<std::size_t>(mat.rows());
      have_r = true;
      if (static_cast<std::size_t>(mat.rows()) != dataset.num_references) {
        throw FormatError(fmt::format("{}: dimension mismatch: {} rows, expected {}", p.string(), mat.rows(),
                                      dataset.num_references));
      }
      if (static_cast<std::size_t>(mat.cols()) != spaces[s].dim) {
        throw FormatError(fmt::format("{}: dimension mismatch: dim {}, space '{}' declares {}", p.string(), mat.cols(),
                                      spaces[s].name, spaces[s].dim));
      }
      dataset.embeddings[s].reference.emplace(k, std::move(mat));
    }
  }
  if (!have_q || !have_r) throw FormatError(fmt::format("{}: each side needs embeddings", manifest_path.string()));

  auto load_mask = [&](const char* key, std::size_t rows, std::size_t cols) -> PresenceMask {
    if (!manifest.contains(key) || manifest.at(key).is_null()) return PresenceMask::Ones(
        static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const auto p = resolve(get_as<std::string>(manifest.at(key), key, manifest_path));
    auto mask = read_mask_file(p);
    if (static_cast<std::size_t>(mask.rows()) != rows || static_cast<std::size_t>(mask.cols()) != cols) {
      throw FormatError(fmt::format("{}: dimension mismatch: mask is {}x{}, expected {}x{}", p.string(), mask.rows(),
                                    mask.cols(), rows, cols));
    }
    return mask;
  };
  dataset.query_mask = load_mask("query_mask", dataset.num_queries, query_names.size());
  dataset.reference_mask = load_mask("reference_mask", dataset.num_references, reference_names.size());

  const auto& relevance = require(manifest, "relevance", manifest_path);
  const auto type = get_as<std::string>(require(relevance, "type", manifest_path), "relevance.type", manifest_path);
  if (type == "pairs") {
    const auto p = resolve(get_as<std::string>(require(relevance, "path", manifest_path), "relevance.path",
                                               manifest_path));
    std::vector<std::vector<std::size_t>> sets(dataset.num_queries);
    for (const auto& [q, r] : read_relevance_pairs(p)) {
      if (q >= dataset.num_queries || r >= dataset.num_references) {
        throw FormatError(fmt::format("{}: relevance index out of range: ({}, {})", p.string(), q, r));
      }
      sets[q].push_back(r);
    }
    dataset.relevance = RelevanceMap(std::move(sets));
  } else if (type == "positions") {
    const auto qp = resolve(get_as<std::string>(require(relevance, "query_path", manifest_path),
                                                "relevance.query_path", manifest_path));
    const auto rp = resolve(get_as<std::string>(require(relevance, "reference_path", manifest_path),
                                                "relevance.reference_path", manifest_path));
    const auto threshold = get_as<double>(require(relevance, "threshold_meters", manifest_path),
                                          "relevance.threshold_meters", manifest_path);
    if (!(threshold > 0)) {
      throw FormatError(fmt::format("{}: field 'relevance.threshold_meters' must be positive", manifest_path.string()));
    }
    const auto query_positions = read_positions(qp);
    const auto reference_positions = read_positions(rp);
    if (static_cast<std::size_t>(query_positions.rows()) != dataset.num_queries) {
      throw FormatError(fmt::format("{}: dimension mismatch: {} positions for {} queries", qp.string(),
                                    query_positions.rows(), dataset.num_queries));
    }
    if (static_cast<std::size_t>(reference_positions.rows()) != dataset.num_references) {
      throw FormatError(fmt::format("{}: dimension mismatch: {} positions for {} references", rp.string(),
                                    reference_positions.rows(), dataset.num_references));
    }
    dataset.relevance = relevance_from_positions(query_positions, reference_positions, threshold);
  } else {
    throw FormatError(fmt::format("{}: unknown relevance type '{}'", manifest_path.string(), type));
  }

  try {
    validate(dataset);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }
  return dataset;
}

fs::path write_dataset(const MultimodalDataset& dataset, const fs::path& directory) {
  validate(dataset);
  fs::create_directories(directory);
  const auto& schema = dataset.schema;
  json manifest;
  manifest["version"] = 1;
  manifest["query_modalities"] = schema.query_modalities();
  manifest["reference_modalities"] = schema.reference_modalities();
  json spaces = json::array();
  for (std::size_t s = 0; s < schema.spaces().size(); ++s) {
    const auto& space = schema.spaces()[s];
    json entry;
    entry["name"] = space.name;
    entry["dim"] = space.dim;
    entry["query_embeddings"] = json::object();
    entry["reference_embeddings"] = json::object();
    for (const auto& [j, mat] : dataset.embeddings[s].query) {
      const auto& name = schema.query_modalities()[j];
      const auto file = fmt::format("query_{}_{}.a2ae", sanitize(space.name), sanitize(name));
      write_embedding_file(directory / file, mat);
      entry["query_embeddings"][name] = file;
    }
    for (const auto& [k, mat] : dataset.embeddings[s].reference) {
      const auto& name = schema.reference_modalities()[k];
      const auto file = fmt::format("reference_{}_{}.a2ae", sanitize(space.name), sanitize(name));
      write_embedding_file(directory / file, mat);
      entry["reference_embeddings"][name] = file;
    }
    spaces.push_back(std::move(entry));
  }
  manifest["spaces"] = std::move(spaces);
  write_mask_file(directory / "query_mask.a2am", dataset.query_mask);
  write_mask_file(directory / "reference_mask.a2am", dataset.reference_mask);
  manifest["query_mask"] = "query_mask.a2am";
  manifest["reference_mask"] = "reference_mask.a2am";

  std::string csv = "query_id,reference_id\n";
  for (std::size_t q = 0; q < dataset.num_queries; ++q) {
    for (auto r : dataset.relevance.relevant(q)) csv += fmt::format("{},{}\n", q, r);
  }
  write_file_atomically(directory / "relevance.csv", csv);
  manifest["relevance"] = {{"type", "pairs"}, {"path", "relevance.csv"}};

  if (!schema.pair_space_overrides().empty()) {
    json overrides = json::object();
    for (const auto& [pair, space] : schema.pair_space_overrides()) {
      overrides[schema.query_modalities()[pair.query] + ":" + schema.reference_modalities()[pair.reference]] = space;
    }
    manifest["pair_space"] = std::move(overrides);
  }
  const auto path = directory / "manifest.json";
  write_file_atomically(path, manifest.dump(2) + "\n");
  return path;
}

}  // namespace confret
