#pragma once

// Code-query pair datasets (CodeSearchNet-style JSONL), splits, candidate
// pools, and the shared token vocabulary.

#include "cocosoda/common.hpp"
#include "cocosoda/lexing.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace cocosoda::corpus {

using json = nlohmann::json;

struct CodeQueryPair {
  std::string id;
  std::string language;
  std::vector<std::string> code_tokens;
  std::vector<std::string> query_tokens;
  std::optional<std::string> raw_code;
  std::string source;  // file or url the pair came from

  friend bool operator==(const CodeQueryPair&, const CodeQueryPair&) = default;
};

enum class Split { train, valid, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "train";
}

inline Split split_from_name(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

/// Pairs plus index lists. A pair may appear in more than one split (the
/// overfit harness uses train == valid == pool); candidate_pool holds indices
/// of pairs whose code is ranked at test time.
class Corpus {
 public:
  std::vector<CodeQueryPair> pairs;
  std::vector<std::size_t> train, valid, test;
  std::vector<std::size_t> candidate_pool;
  std::size_t skipped_lines = 0;

  [[nodiscard]] const std::vector<std::size_t>& split(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::valid: return valid;
      case Split::test: return test;
    }
    return train;
  }

  [[nodiscard]] std::optional<std::size_t> find(std::string_view id) const {
    if (id_index_.size() != pairs.size()) rebuild_index();
    auto it = id_index_.find(std::string(id));
    if (it == id_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Pool used to score queries of `s`: the candidate pool for test, the
  /// split's own code snippets otherwise.
  [[nodiscard]] std::vector<std::size_t> pool_for(Split s) const {
    if (s == Split::test && !candidate_pool.empty()) return candidate_pool;
    return split(s);
  }

  /// Throws DataError if ids collide, indices dangle, or a test gold is
  /// missing from the candidate pool.
  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& p : pairs) {
      if (!seen.insert(p.id).second) throw DataError("duplicate pair id '" + p.id + "'");
      if (p.code_tokens.empty() || p.query_tokens.empty())
        throw DataError("pair '" + p.id + "' has empty token sequence");
    }
    auto check = [&](const std::vector<std::size_t>& idx, std::string_view what) {
      for (auto i : idx)
        if (i >= pairs.size()) throw DataError(std::string(what) + " index out of range");
    };
    check(train, "train");
    check(valid, "valid");
    check(test, "test");
    check(candidate_pool, "candidate_pool");
    if (!candidate_pool.empty()) {
      std::unordered_set<std::size_t> pool(candidate_pool.begin(), candidate_pool.end());
      for (auto i : test)
        if (!pool.count(i)) throw DataError("test pair '" + pairs[i].id + "' missing from candidate pool");
    }
  }

 private:
  mutable std::unordered_map<std::string, std::size_t> id_index_;
  void rebuild_index() const {
    id_index_.clear();
    for (std::size_t i = 0; i < pairs.size(); ++i) id_index_.emplace(pairs[i].id, i);
  }
};

namespace detail {

inline std::optional<std::vector<std::string>> string_array(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_array()) return std::nullopt;
  std::vector<std::string> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_string()) return std::nullopt;
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace detail

/// One pair per valid line, ids "<language>:<line-number>" (1-based).
/// Malformed lines are skipped and counted in `skipped_lines`.
inline Corpus load_jsonl(const std::filesystem::path& path, const std::string& language) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object()) {
      ++corpus.skipped_lines;
      continue;
    }
    auto code = detail::string_array(obj, "code_tokens");
    auto query = detail::string_array(obj, "docstring_tokens");
    if (!code || !query || code->empty() || query->empty()) {
      ++corpus.skipped_lines;
      continue;
    }
    CodeQueryPair pair;
    pair.id = language + ":" + std::to_string(line_no);
    pair.language = language;
    pair.code_tokens = std::move(*code);
    pair.query_tokens = std::move(*query);
    if (auto it = obj.find("code"); it != obj.end() && it->is_string()) pair.raw_code = it->get<std::string>();
    pair.source = path.string();
    if (auto it = obj.find("url"); it != obj.end() && it->is_string()) pair.source = it->get<std::string>();
    corpus.pairs.push_back(std::move(pair));
  }
  if (corpus.skipped_lines)
    log_warning(path.string() + ": skipped " + std::to_string(corpus.skipped_lines) + " malformed line(s)");
  if (corpus.pairs.empty()) throw DataError(path.string() + ": no valid lines");
  return corpus;
}

/// Merges separately shipped split files. Ids become "<language>:<split>:<line>"
/// so line numbers from different files cannot collide. The candidate pool is
/// the test split.
inline Corpus merge_splits(const std::map<Split, Corpus>& parts) {
  Corpus out;
  for (const auto& [split, part] : parts) {
    for (const auto& pair : part.pairs) {
      CodeQueryPair p = pair;
      auto colon = p.id.rfind(':');
      p.id = p.language + ":" + std::string(split_name(split)) + ":" + p.id.substr(colon + 1);
      const auto idx = out.pairs.size();
      out.pairs.push_back(std::move(p));
      switch (split) {
        case Split::train: out.train.push_back(idx); break;
        case Split::valid: out.valid.push_back(idx); break;
        case Split::test: out.test.push_back(idx); break;
      }
    }
    out.skipped_lines += part.skipped_lines;
  }
  out.candidate_pool = out.test;
  out.validate();
  return out;
}

/// Seeded random partition of a single file's pairs.
inline void assign_random_splits(Corpus& corpus, double valid_frac, double test_frac, std::uint64_t seed) {
  if (valid_frac < 0 || test_frac < 0 || valid_frac + test_frac >= 1.0)
    throw std::invalid_argument("split fractions must be non-negative and sum below 1");
  std::vector<std::size_t> order(corpus.pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = derive_rng(seed, stream::kShuffle, 0xC0FFEE);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = order.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_frac * static_cast<double>(n)));
  corpus.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  corpus.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                      order.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid));
  corpus.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_valid), order.end());
  for (auto* v : {&corpus.train, &corpus.valid, &corpus.test}) std::sort(v->begin(), v->end());
  corpus.candidate_pool = corpus.test;
}

inline json to_json(const Corpus& c) {
  json pairs = json::array();
  for (const auto& p : c.pairs) {
    json j = {{"id", p.id},
              {"language", p.language},
              {"code_tokens", p.code_tokens},
              {"query_tokens", p.query_tokens},
              {"source", p.source}};
    if (p.raw_code) j["raw_code"] = *p.raw_code;
    pairs.push_back(std::move(j));
  }
  return {{"format", "cocosoda-corpus"}, {"version", 1},        {"pairs", pairs},
          {"train", c.train},            {"valid", c.valid},    {"test", c.test},
          {"candidate_pool", c.candidate_pool}};
}

inline Corpus corpus_from_json(const json& j) {
  if (j.value("format", "") != "cocosoda-corpus") throw DataError("not a corpus document");
  if (j.value("version", 0) != 1) throw DataError("unsupported corpus version");
  Corpus c;
  for (const auto& pj : j.at("pairs")) {
    CodeQueryPair p;
    p.id = pj.at("id").get<std::string>();
    p.language = pj.at("language").get<std::string>();
    p.code_tokens = pj.at("code_tokens").get<std::vector<std::string>>();
    p.query_tokens = pj.at("query_tokens").get<std::vector<std::string>>();
    p.source = pj.value("source", "");
    if (pj.contains("raw_code")) p.raw_code = pj.at("raw_code").get<std::string>();
    c.pairs.push_back(std::move(p));
  }
  c.train = j.at("train").get<std::vector<std::size_t>>();
  c.valid = j.at("valid").get<std::vector<std::size_t>>();
  c.test = j.at("test").get<std::vector<std::size_t>>();
  c.candidate_pool = j.at("candidate_pool").get<std::vector<std::size_t>>();
  c.validate();
  return c;
}

inline void save_corpus(const Corpus& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(c).dump() << '\n';
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + ": invalid JSON");
  return corpus_from_json(j);
}

// ---------------------------------------------------------------------------
// Vocabulary

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kMask = 2;
inline constexpr std::int32_t kCls = 3;
inline constexpr std::int32_t kSep = 4;
inline constexpr std::string_view kMaskToken = "[MASK]";

inline std::vector<std::string> reserved_tokens() {
  std::vector<std::string> out = {"[PAD]", "[UNK]", "[MASK]", "[CLS]", "[SEP]"};
  for (auto k : lexing::kAllKinds) out.push_back(lexing::type_token(k));
  return out;
}

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(reserved_tokens()) {}

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto reserved = reserved_tokens();
    if (tokens_.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens_.begin()))
      throw DataError("vocabulary does not start with the reserved tokens");
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      if (!ids_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second)
        throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
  }

  [[nodiscard]] std::size_t size() const { return tokens_.size(); }
  [[nodiscard]] const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

  [[nodiscard]] std::int32_t id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
  }

  [[nodiscard]] bool contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

  [[nodiscard]] std::string hash() const {
    Fnv1a h;
    for (const auto& t : tokens_) {
      h.update(t);
      h.update("\0", 1);
    }
    return h.hex();
  }

  [[nodiscard]] json to_json() const {
    return {{"format", "cocosoda-vocab"}, {"version", 1}, {"hash", hash()}, {"tokens", tokens_}};
  }

  static Vocabulary from_json(const json& j) {
    if (j.value("format", "") != "cocosoda-vocab") throw DataError("not a vocabulary document");
    if (j.value("version", 0) != 1) throw DataError("unsupported vocabulary version");
    Vocabulary v(j.at("tokens").get<std::vector<std::string>>());
    if (j.contains("hash") && j.at("hash").get<std::string>() != v.hash())
      throw DataError("vocabulary hash mismatch");
    return v;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << to_json().dump(1) << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError(path.string() + ": invalid JSON");
    return from_json(j);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

/// Reserved tokens first, then corpus tokens (code and query merged) by
/// descending frequency with lexicographic tie-break, until max_size.
/// Counts only the pairs listed in `indices`.
inline Vocabulary build_vocab(const Corpus& corpus, std::span<const std::size_t> indices, std::size_t max_size) {
  auto tokens = reserved_tokens();
  if (max_size < tokens.size())
    throw std::invalid_argument("max_size " + std::to_string(max_size) + " below the " +
                                std::to_string(tokens.size()) + " reserved tokens");
  std::unordered_map<std::string, std::size_t> freq;
  for (auto i : indices) {
    const auto& p = corpus.pairs.at(i);
    for (const auto& t : p.code_tokens) ++freq[t];
    for (const auto& t : p.query_tokens) ++freq[t];
  }
  for (const auto& r : tokens) freq.erase(r);
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [tok, _] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

inline Vocabulary build_vocab(const Corpus& corpus, std::size_t max_size) {
  std::vector<std::size_t> all(corpus.pairs.size());
  std::iota(all.begin(), all.end(), 0);
  return build_vocab(corpus, all, max_size);
}

/// One row of model input: ids of length max_len plus the attention mask.
struct EncodedSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  [[nodiscard]] std::size_t active() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

/// [CLS] + ids + [SEP], truncated to max_len (the last slot stays [SEP]),
/// right-padded with [PAD].
inline EncodedSequence encode_tokens(std::span<const std::string> tokens, const Vocabulary& vocab,
                                     std::size_t max_len) {
  if (tokens.empty()) throw std::invalid_argument("encode_tokens: empty token sequence");
  if (max_len < 2) throw std::invalid_argument("encode_tokens: max_len must be at least 2");
  EncodedSequence seq;
  seq.ids.assign(max_len, kPad);
  seq.mask.assign(max_len, 0);
  const std::size_t body = std::min(tokens.size(), max_len - 2);
  seq.ids[0] = kCls;
  for (std::size_t i = 0; i < body; ++i) seq.ids[i + 1] = vocab.id(tokens[i]);
  seq.ids[body + 1] = kSep;
  for (std::size_t i = 0; i < body + 2; ++i) seq.mask[i] = 1;
  return seq;
}

}  // namespace cocosoda::corpus
