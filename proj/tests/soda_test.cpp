#include "cocosoda/soda.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <map>
#include <sstream>

using namespace cocosoda;
using lexing::TokenKind;
using lexing::TypedToken;

namespace {

std::vector<TypedToken> random_typed(Rng& rng, std::size_t n) {
  static const std::vector<TypedToken> pool = {
      {"def", TokenKind::keyword},      {"x", TokenKind::identifier},    {"foo", TokenKind::identifier},
      {"=", TokenKind::op},             {"+", TokenKind::op},            {"1", TokenKind::number_literal},
      {"'s'", TokenKind::string_literal}, {"(", TokenKind::punctuation}, {")", TokenKind::punctuation},
      {"$", TokenKind::other}};
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<TypedToken> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pool[pick(rng)]);
  return out;
}

const std::vector<TokenKind> kCandidates = {TokenKind::identifier, TokenKind::op};

}  // namespace

TEST(SelectCount, Examples) {
  EXPECT_EQ(soda::select_count(10, 0.15), 2u);
  EXPECT_EQ(soda::select_count(3, 0.15), 1u);
  EXPECT_EQ(soda::select_count(0, 0.5), 0u);
  EXPECT_EQ(soda::select_count(7, 0.0), 0u);
  EXPECT_EQ(soda::select_count(5, 1.0), 5u);
  EXPECT_EQ(soda::select_count(3, 0.5), 2u);
  EXPECT_EQ(soda::select_count(1, 0.01), 1u);
}

TEST(SelectCount, MatchesHalfUpOracle) {
  for (std::size_t n = 1; n <= 60; ++n) {
    for (int pct = 1; pct <= 100; ++pct) {
      // exact rational arithmetic: round(n*pct/100) half up
      const std::size_t num = n * static_cast<std::size_t>(pct);
      std::size_t k = (2 * num + 100) / 200;
      k = std::clamp<std::size_t>(k, 1, n);
      EXPECT_EQ(soda::select_count(n, pct / 100.0), k) << n << " " << pct;
    }
  }
}

TEST(Dm, MasksExactlySelectCount) {
  std::vector<std::string> toks = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    auto aug = soda::dm_traced(toks, 0.15, rng);
    ASSERT_EQ(aug.tokens.size(), toks.size());
    std::size_t masked = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (aug.tokens[i] == "[MASK]") ++masked;
      else EXPECT_EQ(aug.tokens[i], toks[i]);
    }
    EXPECT_EQ(masked, 2u);
    EXPECT_EQ(aug.changed_positions.size(), 2u);
  }
}

TEST(Dm, PositionsAreRoughlyUniform) {
  std::vector<std::string> toks(10, "t");
  std::vector<int> hits(10, 0);
  Rng rng(11);
  const int trials = 5000;
  for (int t = 0; t < trials; ++t)
    for (auto p : soda::dm_traced(toks, 0.1, rng).changed_positions) ++hits[p];
  for (int h : hits) EXPECT_NEAR(h / double(trials), 0.1, 0.02);
}

TEST(Dm, EmptyInputThrows) {
  Rng rng(0);
  EXPECT_THROW(soda::dm(std::vector<std::string>{}, 0.15, rng), std::invalid_argument);
  EXPECT_THROW(soda::dr(std::vector<TypedToken>{}, 0.15, rng), std::invalid_argument);
}

TEST(Dr, ReplacesWithTypeToken) {
  std::vector<TypedToken> toks = {{"x", TokenKind::identifier}, {"=", TokenKind::op}, {"1", TokenKind::number_literal}};
  bool saw_position_zero = false;
  for (std::uint64_t s = 0; s < 64 && !saw_position_zero; ++s) {
    Rng rng(s);
    auto aug = soda::dr_traced(toks, 0.34, rng);
    ASSERT_EQ(aug.changed_positions.size(), 1u);
    if (aug.changed_positions[0] == 0) {
      EXPECT_EQ(aug.tokens, (std::vector<std::string>{"[identifier]", "=", "1"}));
      saw_position_zero = true;
    }
  }
  EXPECT_TRUE(saw_position_zero);
}

TEST(SpecifiedType, OnlyChosenKindChanges) {
  Rng gen(5);
  for (int trial = 0; trial < 500; ++trial) {
    auto toks = random_typed(gen, 1 + trial % 30);
    Rng rng(static_cast<std::uint64_t>(trial));
    for (bool mask : {false, true}) {
      auto aug = mask ? soda::dmst_traced(toks, 0.15, kCandidates, rng) : soda::drst_traced(toks, 0.15, kCandidates, rng);
      ASSERT_EQ(aug.tokens.size(), toks.size());
      if (aug.fell_back_to_dm) {
        for (const auto& t : toks) EXPECT_TRUE(t.kind != TokenKind::identifier && t.kind != TokenKind::op);
        EXPECT_EQ(aug.changed_positions.size(), soda::select_count(toks.size(), 0.15));
        continue;
      }
      ASSERT_TRUE(aug.chosen_kind.has_value());
      const auto kind = *aug.chosen_kind;
      std::size_t n_kind = 0;
      for (const auto& t : toks) n_kind += t.kind == kind;
      EXPECT_EQ(aug.changed_positions.size(), soda::select_count(n_kind, 0.15));
      const std::string repl = mask ? "[MASK]" : lexing::type_token(kind);
      for (std::size_t i = 0; i < toks.size(); ++i) {
        const bool changed = std::binary_search(aug.changed_positions.begin(), aug.changed_positions.end(), i);
        if (changed) {
          EXPECT_EQ(toks[i].kind, kind);
          EXPECT_EQ(aug.tokens[i], repl);
        } else {
          EXPECT_EQ(aug.tokens[i], toks[i].text);
        }
      }
    }
  }
}

TEST(SpecifiedType, KindDrawIsUniformOverPresentCandidates) {
  std::vector<TypedToken> toks = {{"x", TokenKind::identifier}, {"+", TokenKind::op}, {"1", TokenKind::number_literal}};
  std::map<TokenKind, int> counts;
  Rng rng(9);
  for (int i = 0; i < 4000; ++i) ++counts[*soda::drst_traced(toks, 0.5, kCandidates, rng).chosen_kind];
  EXPECT_NEAR(counts[TokenKind::identifier] / 4000.0, 0.5, 0.04);
  EXPECT_NEAR(counts[TokenKind::op] / 4000.0, 0.5, 0.04);
}

TEST(SpecifiedType, FallsBackToDmWhenNoCandidatePresent) {
  std::vector<TypedToken> toks = {{"1", TokenKind::number_literal}, {"(", TokenKind::punctuation}};
  Rng rng(1);
  auto aug = soda::drst_traced(toks, 0.5, kCandidates, rng);
  EXPECT_TRUE(aug.fell_back_to_dm);
  EXPECT_FALSE(aug.chosen_kind.has_value());
  EXPECT_EQ(aug.method, soda::Method::DRST);
  EXPECT_EQ(std::count(aug.tokens.begin(), aug.tokens.end(), "[MASK]"), 1);
}

TEST(Augment, MethodDispatchIsUniform) {
  auto pair = testing_support::make_pair("p", {"def", "f", "(", "x", ")", ":", "return", "x", "+", "1"}, {"q"});
  soda::AugmentationConfig cfg;
  std::map<soda::Method, int> counts;
  Rng rng(2024);
  const int n = 4000;
  for (int i = 0; i < n; ++i) ++counts[soda::augment_code_traced(pair, cfg, rng).method];
  for (auto m : cfg.methods) EXPECT_NEAR(counts[m] / double(n), 0.25, 0.05) << soda::method_name(m);
}

TEST(Augment, RestrictedMethodSet) {
  auto pair = testing_support::make_pair("p", {"a", "b", "c"}, {"q"});
  soda::AugmentationConfig cfg;
  cfg.methods = {soda::Method::DR};
  Rng rng(3);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(soda::augment_code_traced(pair, cfg, rng).method, soda::Method::DR);
  cfg.methods.clear();
  EXPECT_THROW(soda::augment_code(pair, cfg, rng), std::invalid_argument);
  cfg.methods = {soda::Method::DM};
  cfg.ratio = 1.5;
  EXPECT_THROW(soda::augment_code(pair, cfg, rng), std::invalid_argument);
}

TEST(Augment, QueryOnlyMasks) {
  soda::AugmentationConfig cfg;
  std::vector<std::string> q = {"return", "the", "sum", "of", "two", "numbers", "x", "+"};
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    auto aug = soda::augment_query_traced(q, cfg, rng);
    EXPECT_EQ(aug.method, soda::Method::DM);
    for (std::size_t j = 0; j < q.size(); ++j)
      EXPECT_TRUE(aug.tokens[j] == q[j] || aug.tokens[j] == "[MASK]");
  }
}

TEST(Augment, SeededCallsReproduce) {
  auto pair = testing_support::make_pair("p", {"def", "f", "(", "x", ")", "=", "y"}, {"q"});
  soda::AugmentationConfig cfg;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto a = derive_rng(7, stream::kAugment, s);
    auto b = derive_rng(7, stream::kAugment, s);
    EXPECT_EQ(soda::augment_code(pair, cfg, a), soda::augment_code(pair, cfg, b));
  }
}

TEST(Augment, AuditRecord) {
  std::vector<std::string> toks = {"a", "b", "c", "d"};
  Rng rng(1);
  auto aug = soda::dm_traced(toks, 0.5, rng);
  std::ostringstream os;
  soda::write_audit(os, 3, "id-1", "code", aug);
  auto j = nlohmann::json::parse(os.str());
  EXPECT_EQ(j["step"], 3);
  EXPECT_EQ(j["method"], "DM");
  EXPECT_TRUE(j["kind"].is_null());
  EXPECT_EQ(j["changed"].size(), 2u);
}

TEST(Augment, MethodNames) {
  for (auto m : {soda::Method::DM, soda::Method::DR, soda::Method::DRST, soda::Method::DMST})
    EXPECT_EQ(soda::method_from_name(soda::method_name(m)), m);
  EXPECT_THROW(soda::method_from_name("XX"), std::invalid_argument);
}
