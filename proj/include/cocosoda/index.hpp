#pragma once

// Exact cosine top-k over a persisted matrix of unit code embeddings.
//
//   "CCSDINDX" | u32 version | u8 endianness | u32 dim | u64 count |
//   str fingerprint | count x str id | str metadata JSON | f32[count*dim] | u32 CRC-32

#include "cocosoda/binary_io.hpp"
#include "cocosoda/checkpoint.hpp"
#include "cocosoda/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

namespace cocosoda::index {

inline constexpr char kIndexMagic[8] = {'C', 'C', 'S', 'D', 'I', 'N', 'D', 'X'};
inline constexpr std::uint32_t kIndexVersion = 1;

class StaleIndexError : public DataError {
 public:
  using DataError::DataError;
};

struct Entry {
  std::string language;
  std::string snippet;  // raw code, or the code tokens joined by spaces
  std::string source;

  friend bool operator==(const Entry&, const Entry&) = default;
};

struct EmbeddingIndex {
  std::vector<std::string> ids;
  std::vector<Entry> entries;
  Matrix<float> vectors;  // one unit row per id
  std::string fingerprint;
  nlohmann::json info = nlohmann::json::object();

  [[nodiscard]] std::size_t size() const { return ids.size(); }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(vectors.cols()); }
};

struct SearchHit {
  std::size_t rank = 0;
  std::string id;
  double score = 0.0;
  Entry entry;
};

/// Encodes `indices` of `c` with the code encoder in eval mode.
inline EmbeddingIndex build_index(const Checkpoint& ck, const corpus::Corpus& c, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("index: nothing to index");
  EmbeddingIndex ix;
  std::unordered_set<std::string> seen;
  for (auto i : indices) {
    const auto& p = c.pairs.at(i);
    if (!seen.insert(p.id).second) throw DataError("index: duplicate id '" + p.id + "'");
    ix.ids.push_back(p.id);
    ix.entries.push_back({p.language, p.raw_code.value_or(join(p.code_tokens, " ")), p.source});
  }
  ix.vectors = contrastive::normalize_rows<float>(
      evaluation::encode_code(ck.model, c, indices, ck.vocab, ck.config.limits.max_code_len));
  ix.fingerprint = ck.fingerprint();
  ix.info = {{"checkpoint_stage", ck.stage}, {"checkpoint_step", ck.step}, {"build", COCOSODA_BUILD_ID}};
  return ix;
}

inline EmbeddingIndex build_index(const Checkpoint& ck, const corpus::Corpus& c) {
  std::vector<std::size_t> all(c.pairs.size());
  std::iota(all.begin(), all.end(), 0);
  return build_index(ck, c, all);
}

inline void require_fresh(const EmbeddingIndex& ix, const Checkpoint& ck) {
  const auto fp = ck.fingerprint();
  if (ix.fingerprint != fp)
    throw StaleIndexError("stale index: built for model " + ix.fingerprint + ", checkpoint is " + fp +
                          " (rebuild with `cocosoda index`)");
}

/// Unit query representation of free text (whitespace-tokenized).
inline RowVector<float> embed_query(const Checkpoint& ck, std::string_view text) {
  const auto tokens = split_whitespace(text);
  if (tokens.empty()) throw std::invalid_argument("search: empty query");
  const std::vector<corpus::EncodedSequence> seq = {
      corpus::encode_tokens(tokens, ck.vocab, ck.config.limits.max_query_len)};
  return contrastive::normalize_rows<float>(ck.model.query_encoder().encode(seq)).row(0);
}

/// Top-k rows by dot product with a unit query; ties go to the smaller row.
inline std::vector<SearchHit> search_vector(const EmbeddingIndex& ix, const RowVector<float>& q, std::size_t k) {
  if (k < 1) throw std::invalid_argument("search: k must be >= 1");
  if (static_cast<std::size_t>(q.size()) != ix.dim()) throw std::invalid_argument("search: dimension mismatch");
  const auto n = ix.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = ix.vectors.row(static_cast<Eigen::Index>(i)).cast<double>().dot(q.cast<double>());
    scores[i] = std::clamp(s, -1.0, 1.0);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  std::vector<SearchHit> hits;
  for (std::size_t r = 0; r < k; ++r) {
    const auto i = order[r];
    hits.push_back({r + 1, ix.ids[i], scores[i], ix.entries[i]});
  }
  return hits;
}

inline std::vector<SearchHit> search(const EmbeddingIndex& ix, const Checkpoint& ck, std::string_view text,
                                     std::size_t k) {
  require_fresh(ix, ck);
  if (k < 1) throw std::invalid_argument("search: k must be >= 1");
  return search_vector(ix, embed_query(ck, text), k);
}

inline nlohmann::json hit_json(const SearchHit& h) {
  return {{"rank", h.rank},
          {"id", h.id},
          {"score", h.score},
          {"language", h.entry.language},
          {"snippet", h.entry.snippet},
          {"source", h.entry.source}};
}

/// Response body shared by the CLI (--json) and /api/search.
inline nlohmann::json search_response(std::string_view query, std::size_t k, const std::vector<SearchHit>& hits) {
  auto arr = nlohmann::json::array();
  for (const auto& h : hits) arr.push_back(hit_json(h));
  return {{"v", 1}, {"query", query}, {"k", k}, {"hits", arr}};
}

inline void save_index(const EmbeddingIndex& ix, const std::filesystem::path& path) {
  if (ix.ids.size() != static_cast<std::size_t>(ix.vectors.rows()) || ix.entries.size() != ix.ids.size())
    throw std::invalid_argument("index: inconsistent sizes");
  io::ByteWriter w;
  w.bytes(kIndexMagic, sizeof(kIndexMagic));
  w.put<std::uint32_t>(kIndexVersion);
  w.put<std::uint8_t>(io::kLittleEndian);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ix.dim()));
  w.put<std::uint64_t>(ix.size());
  w.str(ix.fingerprint);
  for (const auto& id : ix.ids) w.str(id);
  auto meta = nlohmann::json::array();
  for (const auto& e : ix.entries) meta.push_back({{"language", e.language}, {"snippet", e.snippet}, {"source", e.source}});
  w.str(nlohmann::json{{"entries", meta}, {"info", ix.info}}.dump());
  w.floats(ix.vectors.data(), static_cast<std::size_t>(ix.vectors.size()));
  w.seal();
  w.write_file(path);
}

inline EmbeddingIndex load_index(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.verify_seal(path.string());
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kIndexMagic, sizeof(magic)) != 0) throw DataError(path.string() + ": not an index file");
  if (auto v = r.get<std::uint32_t>(); v != kIndexVersion)
    throw DataError(path.string() + ": unsupported index version " + std::to_string(v));
  if (r.get<std::uint8_t>() != io::kLittleEndian) throw DataError(path.string() + ": unsupported endianness");
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  EmbeddingIndex ix;
  ix.fingerprint = r.str();
  for (std::uint64_t i = 0; i < count; ++i) ix.ids.push_back(r.str());
  auto meta = nlohmann::json::parse(r.str(), nullptr, false);
  if (meta.is_discarded() || meta.at("entries").size() != count) throw DataError(path.string() + ": corrupt metadata");
  for (const auto& e : meta.at("entries"))
    ix.entries.push_back({e.at("language").get<std::string>(), e.at("snippet").get<std::string>(),
                          e.at("source").get<std::string>()});
  ix.info = meta.value("info", nlohmann::json::object());
  ix.vectors.resize(static_cast<Eigen::Index>(count), dim);
  r.floats(ix.vectors.data(), static_cast<std::size_t>(ix.vectors.size()));
  if (r.remaining() != 0) throw DataError(path.string() + ": trailing bytes");
  return ix;
}

}  // namespace cocosoda::index
