#pragma once

// Toy code/query corpora. Each pair describes one (action, object) combination;
// queries use plain English words while the code uses distinct identifier
// spellings, so the two modalities share no tokens and retrieval has to be
// learned from the pairing.

#include "cocosoda/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace cocosoda::synthetic {

inline const std::vector<std::string>& actions() {
  static const std::vector<std::string> v = {
      "read",   "write",  "parse",   "sort",    "filter",  "merge",    "split",  "join",
      "encode", "decode", "compress", "hash",   "validate", "convert", "copy",   "delete",
      "count",  "find",   "replace", "reverse", "format",  "load",     "save",   "send",
      "fetch",  "compare", "normalize", "print", "update",  "insert",   "remove", "shuffle"};
  return v;
}

inline const std::vector<std::string>& objects() {
  static const std::vector<std::string> v = {
      "file",    "string", "list",   "array",  "csv",     "json",   "url",     "date",
      "image",   "matrix", "queue",  "stack",  "tree",    "graph",  "socket",  "buffer",
      "config",  "token",  "record", "table",  "column",  "row",    "email",   "password",
      "path",    "number", "byte",   "vector", "dictionary", "set", "header",  "timestamp"};
  return v;
}

struct Options {
  std::size_t n_train = 512;
  std::size_t n_valid = 0;
  std::size_t n_test = 64;
  std::uint64_t seed = 0;
  std::string language = "python";
};

namespace detail {

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

inline corpus::CodeQueryPair make_pair(std::size_t a, std::size_t o, Rng& rng, const std::string& language) {
  const auto& act = actions()[a];
  const auto& obj = objects()[o];
  static const std::vector<std::string> lead = {"how", "to", "a", "the", "function", "given", "helper"};
  static const std::vector<std::string> tail = {"quickly", "safely", "in", "python", "with", "default", "values"};
  static const std::vector<std::string> args = {"x", "data", "src", "value", "item", "obj"};
  static const std::vector<std::string> noise = {"tmp", "res", "out", "idx", "n", "i", "acc"};

  corpus::CodeQueryPair p;
  p.language = language;
  std::uniform_int_distribution<int> coin(0, 1);
  if (coin(rng)) p.query_tokens.push_back(pick(lead, rng));
  p.query_tokens.push_back(act);
  if (coin(rng)) p.query_tokens.push_back(pick(lead, rng));
  p.query_tokens.push_back(obj);
  if (coin(rng)) p.query_tokens.push_back(pick(tail, rng));

  const std::string fn_a = coin(rng) ? "do_" + act : act + "er";
  const std::string fn_o = coin(rng) ? obj + "_obj" : "as_" + obj;
  const std::string arg = pick(args, rng);
  const std::string tmp = pick(noise, rng);
  p.code_tokens = {"def", fn_a, "(", arg, ")", ":", tmp, "=", fn_o, "(", arg, ")"};
  if (coin(rng)) p.code_tokens.insert(p.code_tokens.end(), {"if", tmp, "is", "None", ":", "return", "None"});
  p.code_tokens.insert(p.code_tokens.end(), {"return", fn_a, "(", tmp, ")"});
  p.raw_code = "def " + fn_a + "(" + arg + "):\n    " + tmp + " = " + fn_o + "(" + arg + ")\n    return " + fn_a +
               "(" + tmp + ")\n";
  return p;
}

}  // namespace detail

/// Train/valid/test pairs over distinct (action, object) combinations. The
/// test split doubles as the candidate pool.
inline corpus::Corpus generate(const Options& opt) {
  const std::size_t n = opt.n_train + opt.n_valid + opt.n_test;
  const std::size_t combos = actions().size() * objects().size();
  if (n == 0) throw std::invalid_argument("synthetic: no pairs requested");
  if (n > combos) throw std::invalid_argument("synthetic: at most " + std::to_string(combos) + " pairs");
  auto rng = derive_rng(opt.seed, 0x5e7, 0);
  std::vector<std::size_t> ids(combos);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);

  corpus::Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    auto p = detail::make_pair(ids[i] / objects().size(), ids[i] % objects().size(), rng, opt.language);
    p.id = "synth:" + std::to_string(i);
    p.source = "synthetic/" + std::to_string(i);
    c.pairs.push_back(std::move(p));
    if (i < opt.n_train) c.train.push_back(i);
    else if (i < opt.n_train + opt.n_valid) c.valid.push_back(i);
    else c.test.push_back(i);
  }
  c.candidate_pool = c.test;
  return c;
}

/// n pairs used as train, valid, test and pool at once.
inline corpus::Corpus overfit(std::size_t n, std::uint64_t seed) {
  auto c = generate({.n_train = n, .n_valid = 0, .n_test = 0, .seed = seed});
  c.valid = c.train;
  c.test = c.train;
  c.candidate_pool = c.train;
  return c;
}

/// CodeSearchNet-style JSONL line.
inline nlohmann::json to_jsonl_record(const corpus::CodeQueryPair& p) {
  nlohmann::json j = {{"code_tokens", p.code_tokens}, {"docstring_tokens", p.query_tokens}};
  if (p.raw_code) j["code"] = *p.raw_code;
  if (!p.source.empty()) j["url"] = p.source;
  return j;
}

/// Writes train.jsonl / valid.jsonl / test.jsonl (empty splits are skipped).
inline void write_jsonl_splits(const corpus::Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (auto s : {corpus::Split::train, corpus::Split::valid, corpus::Split::test}) {
    const auto& idx = c.split(s);
    if (idx.empty()) continue;
    std::ofstream out(dir / (std::string(corpus::split_name(s)) + ".jsonl"));
    if (!out) throw DataError("cannot write under " + dir.string());
    for (auto i : idx) out << to_jsonl_record(c.pairs[i]).dump() << '\n';
  }
}

}  // namespace cocosoda::synthetic
