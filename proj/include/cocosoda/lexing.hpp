#pragma once

// Token-level lexical classification of pre-tokenized source code.

#include "cocosoda/common.hpp"

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#ifndef COCOSODA_KEYWORD_DIR
#define COCOSODA_KEYWORD_DIR "data/keywords"
#endif

namespace cocosoda::lexing {

enum class TokenKind : std::uint8_t {
  keyword,
  identifier,
  op,
  number_literal,
  string_literal,
  punctuation,
  other,
};

inline constexpr std::array<TokenKind, 7> kAllKinds = {
    TokenKind::keyword,        TokenKind::identifier,  TokenKind::op,    TokenKind::number_literal,
    TokenKind::string_literal, TokenKind::punctuation, TokenKind::other,
};

inline std::string_view kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::keyword: return "keyword";
    case TokenKind::identifier: return "identifier";
    case TokenKind::op: return "operator";
    case TokenKind::number_literal: return "number_literal";
    case TokenKind::string_literal: return "string_literal";
    case TokenKind::punctuation: return "punctuation";
    case TokenKind::other: return "other";
  }
  return "other";
}

inline std::optional<TokenKind> kind_from_name(std::string_view name) {
  for (auto k : kAllKinds)
    if (kind_name(k) == name) return k;
  return std::nullopt;
}

/// Surface form substituted for a token when it is replaced by its type.
inline std::string type_token(TokenKind kind) { return "[" + std::string(kind_name(kind)) + "]"; }

struct TypedToken {
  std::string text;
  TokenKind kind = TokenKind::other;

  friend bool operator==(const TypedToken&, const TypedToken&) = default;
};

/// Keyword sets per language, read from `<dir>/<language>.txt` (one keyword
/// per line, `#` starts a comment line).
class KeywordRegistry {
 public:
  KeywordRegistry() = default;

  static KeywordRegistry from_directory(const std::filesystem::path& dir) {
    KeywordRegistry reg;
    if (!std::filesystem::is_directory(dir)) {
      log_warning("keyword directory not found: " + dir.string());
      return reg;
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".txt") continue;
      std::ifstream in(entry.path());
      std::unordered_set<std::string> words;
      std::string line;
      while (std::getline(in, line)) {
        auto toks = split_whitespace(line);
        if (toks.empty() || toks.front().starts_with('#')) continue;
        words.insert(toks.front());
      }
      reg.add(entry.path().stem().string(), std::move(words));
    }
    return reg;
  }

  /// $COCOSODA_DATA_ROOT/keywords if set, else the directory shipped with the sources.
  static const KeywordRegistry& default_registry() {
    static const KeywordRegistry reg = [] {
      if (const char* root = std::getenv("COCOSODA_DATA_ROOT")) {
        auto dir = std::filesystem::path(root) / "keywords";
        if (std::filesystem::is_directory(dir)) return from_directory(dir);
      }
      return from_directory(COCOSODA_KEYWORD_DIR);
    }();
    return reg;
  }

  void add(std::string language, std::unordered_set<std::string> words) {
    profiles_[std::move(language)] = std::move(words);
  }

  [[nodiscard]] bool has(std::string_view language) const {
    return profiles_.find(std::string(language)) != profiles_.end();
  }

  /// nullptr means the generic profile (no keywords).
  [[nodiscard]] const std::unordered_set<std::string>* keywords(std::string_view language) const {
    auto it = profiles_.find(std::string(language));
    return it == profiles_.end() ? nullptr : &it->second;
  }

  [[nodiscard]] std::vector<std::string> languages() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : profiles_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, std::unordered_set<std::string>> profiles_;
};

namespace detail {

inline bool is_operator_char(char c) {
  static constexpr std::string_view kOps = "+-*/%=<>!&|^~?:";
  return kOps.find(c) != std::string_view::npos;
}

inline bool is_punct_char(char c) {
  static constexpr std::string_view kPunct = "()[]{},;.";
  return kPunct.find(c) != std::string_view::npos;
}

inline bool is_letter(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalpha(u) || u >= 0x80;
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Optional string prefix (r, b, f, u, rb, ...), then a quote, then the same
// quote closing the token.
inline bool looks_like_string(std::string_view t) {
  std::size_t i = 0;
  while (i < t.size() && i < 2 && std::string_view("rRbBfFuU").find(t[i]) != std::string_view::npos) ++i;
  if (i >= t.size()) return false;
  const char q = t[i];
  if (q != '"' && q != '\'' && q != '`') return false;
  const auto body = t.substr(i);
  return body.size() >= 2 && body.back() == q;
}

inline bool looks_like_number(std::string_view t) {
  std::size_t i = 0;
  if (i < t.size() && (t[i] == '+' || t[i] == '-')) ++i;
  if (i >= t.size()) return false;
  auto rest = t.substr(i);
  auto all_of = [](std::string_view s, auto pred) {
    if (s.empty()) return false;
    for (char c : s)
      if (!pred(c) && c != '_') return false;
    return true;
  };
  if (rest.size() > 2 && rest[0] == '0') {
    const char p = static_cast<char>(std::tolower(static_cast<unsigned char>(rest[1])));
    auto digits = rest.substr(2);
    while (!digits.empty() && std::string_view("lLuU").find(digits.back()) != std::string_view::npos)
      digits.remove_suffix(1);
    if (p == 'x') return all_of(digits, [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; });
    if (p == 'b') return all_of(digits, [](char c) { return c == '0' || c == '1'; });
    if (p == 'o') return all_of(digits, [](char c) { return c >= '0' && c <= '7'; });
  }
  // Decimal: digits [. digits] [e[+-]digits] [suffix]
  std::size_t j = 0;
  bool mantissa_digits = false;
  while (j < rest.size() && (is_digit(rest[j]) || (rest[j] == '_' && j > 0))) {
    mantissa_digits = true;
    ++j;
  }
  if (j < rest.size() && rest[j] == '.') {
    ++j;
    while (j < rest.size() && (is_digit(rest[j]) || rest[j] == '_')) {
      mantissa_digits = true;
      ++j;
    }
  }
  if (!mantissa_digits) return false;
  if (j < rest.size() && (rest[j] == 'e' || rest[j] == 'E')) {
    ++j;
    if (j < rest.size() && (rest[j] == '+' || rest[j] == '-')) ++j;
    std::size_t exp_start = j;
    while (j < rest.size() && is_digit(rest[j])) ++j;
    if (j == exp_start) return false;
  }
  while (j < rest.size() && std::string_view("lLfFdDjJuU").find(rest[j]) != std::string_view::npos) ++j;
  return j == rest.size();
}

}  // namespace detail

/// Rules in priority order: keyword set, quoted string, number, operator
/// characters only, punctuation characters only, letter/underscore start.
inline TokenKind classify_token(std::string_view token,
                                const std::unordered_set<std::string>* keywords) {
  if (token.empty()) return TokenKind::other;
  if (keywords && keywords->count(std::string(token))) return TokenKind::keyword;
  if (detail::looks_like_string(token)) return TokenKind::string_literal;
  if (detail::looks_like_number(token)) return TokenKind::number_literal;
  bool all_ops = true, all_punct = true;
  for (char c : token) {
    all_ops = all_ops && detail::is_operator_char(c);
    all_punct = all_punct && detail::is_punct_char(c);
  }
  if (all_ops) return TokenKind::op;
  if (all_punct) return TokenKind::punctuation;
  if (detail::is_letter(token.front()) || token.front() == '_') return TokenKind::identifier;
  return TokenKind::other;
}

inline std::vector<TypedToken> classify_tokens(std::span<const std::string> tokens,
                                               std::string_view language,
                                               const KeywordRegistry& registry) {
  const auto* keywords = registry.keywords(language);
  if (!keywords && language != "generic") {
    static std::mutex mu;
    static std::set<std::string> warned;
    std::lock_guard lock(mu);
    if (warned.insert(std::string(language)).second)
      log_warning("no keyword profile for language '" + std::string(language) +
                  "', using generic profile");
  }
  std::vector<TypedToken> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back({t, classify_token(t, keywords)});
  return out;
}

inline std::vector<TypedToken> classify_tokens(std::span<const std::string> tokens,
                                               std::string_view language) {
  return classify_tokens(tokens, language, KeywordRegistry::default_registry());
}

}  // namespace cocosoda::lexing
