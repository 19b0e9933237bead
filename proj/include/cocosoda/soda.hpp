#pragma once

// Soft data augmentation: dynamic masking (DM), dynamic replacement with the
// token type (DR), and the specified-type variants (DRST, DMST). A fresh
// augmentation is drawn every time a sample is visited.

#include "cocosoda/common.hpp"
#include "cocosoda/corpus.hpp"
#include "cocosoda/lexing.hpp"

#include <json.hpp>

#include <algorithm>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace cocosoda::soda {

using lexing::TokenKind;
using lexing::TypedToken;

enum class Method : std::uint8_t { DM, DR, DRST, DMST };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::DM: return "DM";
    case Method::DR: return "DR";
    case Method::DRST: return "DRST";
    case Method::DMST: return "DMST";
  }
  return "DM";
}

inline Method method_from_name(std::string_view name) {
  for (auto m : {Method::DM, Method::DR, Method::DRST, Method::DMST})
    if (method_name(m) == name) return m;
  throw std::invalid_argument("unknown augmentation method '" + std::string(name) + "'");
}

struct AugmentationConfig {
  double ratio = 0.15;
  std::vector<Method> methods = {Method::DM, Method::DR, Method::DRST, Method::DMST};
  std::vector<TokenKind> specified_type_candidates = {TokenKind::identifier, TokenKind::op};

  void validate() const {
    if (methods.empty()) throw std::invalid_argument("augmentation needs at least one method");
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("augmentation ratio must be in [0,1]");
  }
};

/// Result of one augmentation plus what was done, for auditing.
struct Augmented {
  std::vector<std::string> tokens;
  Method method = Method::DM;
  std::vector<std::size_t> changed_positions;  // ascending
  std::optional<TokenKind> chosen_kind;        // DRST/DMST only
  bool fell_back_to_dm = false;
};

/// k = 0 when r == 0 or n == 0, else max(1, round_half_up(r * n)), capped at n.
inline std::size_t select_count(std::size_t n, double r) {
  if (n == 0 || r <= 0.0) return 0;
  // The epsilon absorbs representation error such as 0.15 * 10 = 1.4999...
  const double scaled = r * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::floor(scaled + 0.5 + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

namespace detail {

// k indices drawn uniformly without replacement from `candidates`, sorted.
inline std::vector<std::size_t> sample_positions(std::vector<std::size_t> candidates, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline std::vector<std::string> texts(std::span<const TypedToken> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

}  // namespace detail

inline Augmented dm_traced(std::span<const std::string> tokens, double r, Rng& rng) {
  if (tokens.empty()) throw std::invalid_argument("dm: empty token sequence");
  Augmented out;
  out.method = Method::DM;
  out.tokens.assign(tokens.begin(), tokens.end());
  out.changed_positions = detail::sample_positions(detail::iota(tokens.size()), select_count(tokens.size(), r), rng);
  for (auto p : out.changed_positions) out.tokens[p] = std::string(corpus::kMaskToken);
  return out;
}

inline std::vector<std::string> dm(std::span<const std::string> tokens, double r, Rng& rng) {
  return dm_traced(tokens, r, rng).tokens;
}

inline Augmented dr_traced(std::span<const TypedToken> tokens, double r, Rng& rng) {
  if (tokens.empty()) throw std::invalid_argument("dr: empty token sequence");
  Augmented out;
  out.method = Method::DR;
  out.tokens = detail::texts(tokens);
  out.changed_positions = detail::sample_positions(detail::iota(tokens.size()), select_count(tokens.size(), r), rng);
  for (auto p : out.changed_positions) out.tokens[p] = lexing::type_token(tokens[p].kind);
  return out;
}

inline std::vector<std::string> dr(std::span<const TypedToken> tokens, double r, Rng& rng) {
  return dr_traced(tokens, r, rng).tokens;
}

namespace detail {

// Shared body of DRST/DMST: pick a kind among candidates present, then
// replace select_count(n_kind, r) of its tokens. Falls back to DM when no
// candidate kind occurs.
inline Augmented specified_type(std::span<const TypedToken> tokens, double r, std::span<const TokenKind> candidates,
                                Rng& rng, Method method) {
  if (tokens.empty()) throw std::invalid_argument("specified-type augmentation: empty token sequence");
  std::vector<TokenKind> present;
  for (auto k : candidates) {
    if (std::find(present.begin(), present.end(), k) != present.end()) continue;
    if (std::any_of(tokens.begin(), tokens.end(), [&](const TypedToken& t) { return t.kind == k; }))
      present.push_back(k);
  }
  if (present.empty()) {
    auto words = texts(tokens);
    Augmented out = dm_traced(words, r, rng);
    out.method = method;
    out.fell_back_to_dm = true;
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, present.size() - 1);
  const TokenKind kind = present[pick(rng)];
  std::vector<std::size_t> of_kind;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i].kind == kind) of_kind.push_back(i);
  Augmented out;
  out.method = method;
  out.chosen_kind = kind;
  out.tokens = texts(tokens);
  const auto k = select_count(of_kind.size(), r);
  out.changed_positions = sample_positions(std::move(of_kind), k, rng);
  const std::string replacement =
      method == Method::DRST ? lexing::type_token(kind) : std::string(corpus::kMaskToken);
  for (auto p : out.changed_positions) out.tokens[p] = replacement;
  return out;
}

}  // namespace detail

inline Augmented drst_traced(std::span<const TypedToken> tokens, double r, std::span<const TokenKind> candidates,
                             Rng& rng) {
  return detail::specified_type(tokens, r, candidates, rng, Method::DRST);
}

inline std::vector<std::string> drst(std::span<const TypedToken> tokens, double r,
                                     std::span<const TokenKind> candidates, Rng& rng) {
  return drst_traced(tokens, r, candidates, rng).tokens;
}

inline Augmented dmst_traced(std::span<const TypedToken> tokens, double r, std::span<const TokenKind> candidates,
                             Rng& rng) {
  return detail::specified_type(tokens, r, candidates, rng, Method::DMST);
}

inline std::vector<std::string> dmst(std::span<const TypedToken> tokens, double r,
                                     std::span<const TokenKind> candidates, Rng& rng) {
  return dmst_traced(tokens, r, candidates, rng).tokens;
}

/// One method drawn uniformly from cfg.methods per call.
inline Augmented augment_code_traced(const corpus::CodeQueryPair& pair, const AugmentationConfig& cfg, Rng& rng,
                                     const lexing::KeywordRegistry& keywords) {
  cfg.validate();
  std::uniform_int_distribution<std::size_t> pick(0, cfg.methods.size() - 1);
  const Method method = cfg.methods[pick(rng)];
  if (method == Method::DM) return dm_traced(pair.code_tokens, cfg.ratio, rng);
  const auto typed = lexing::classify_tokens(pair.code_tokens, pair.language, keywords);
  switch (method) {
    case Method::DR: return dr_traced(typed, cfg.ratio, rng);
    case Method::DRST: return drst_traced(typed, cfg.ratio, cfg.specified_type_candidates, rng);
    case Method::DMST: return dmst_traced(typed, cfg.ratio, cfg.specified_type_candidates, rng);
    case Method::DM: break;
  }
  return dm_traced(pair.code_tokens, cfg.ratio, rng);
}

inline Augmented augment_code_traced(const corpus::CodeQueryPair& pair, const AugmentationConfig& cfg, Rng& rng) {
  return augment_code_traced(pair, cfg, rng, lexing::KeywordRegistry::default_registry());
}

inline std::vector<std::string> augment_code(const corpus::CodeQueryPair& pair, const AugmentationConfig& cfg,
                                             Rng& rng) {
  return augment_code_traced(pair, cfg, rng).tokens;
}

/// Queries carry no type information, so only DM applies.
inline Augmented augment_query_traced(std::span<const std::string> tokens, const AugmentationConfig& cfg, Rng& rng) {
  return dm_traced(tokens, cfg.ratio, rng);
}

inline std::vector<std::string> augment_query(std::span<const std::string> tokens, const AugmentationConfig& cfg,
                                              Rng& rng) {
  return augment_query_traced(tokens, cfg, rng).tokens;
}

/// JSON-lines audit record: {"step", "id", "modality", "method", "kind", "fallback", "changed"}.
inline void write_audit(std::ostream& out, std::uint64_t step, std::string_view id, std::string_view modality,
                        const Augmented& aug) {
  nlohmann::json j = {{"step", step},
                      {"id", id},
                      {"modality", modality},
                      {"method", method_name(aug.method)},
                      {"fallback", aug.fell_back_to_dm},
                      {"changed", aug.changed_positions}};
  j["kind"] = aug.chosen_kind ? nlohmann::json(lexing::kind_name(*aug.chosen_kind)) : nlohmann::json(nullptr);
  out << j.dump() << '\n';
}

}  // namespace cocosoda::soda
