#include "cocosoda/corpus.hpp"
#include "cocosoda/lexing.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace cocosoda;
using lexing::TokenKind;
using testing_support::TempDir;
using testing_support::write_text;

namespace {

std::vector<TokenKind> kinds(const std::vector<std::string>& toks, std::string_view lang) {
  std::vector<TokenKind> out;
  for (const auto& t : lexing::classify_tokens(toks, lang)) out.push_back(t.kind);
  return out;
}

}  // namespace

TEST(Lexing, PythonDefinitionHeader) {
  EXPECT_EQ(kinds({"def", "foo", "(", "x", ")"}, "python"),
            (std::vector<TokenKind>{TokenKind::keyword, TokenKind::identifier, TokenKind::punctuation,
                                    TokenKind::identifier, TokenKind::punctuation}));
}

TEST(Lexing, OperatorsAndLiterals) {
  EXPECT_EQ(kinds({"=="}, "python"), std::vector<TokenKind>{TokenKind::op});
  EXPECT_EQ(kinds({"\"hi\"", "42"}, "python"),
            (std::vector<TokenKind>{TokenKind::string_literal, TokenKind::number_literal}));
  EXPECT_EQ(kinds({"'a'", "r'\\d'", "b\"x\"", "3.5e-2", "0x1F", "->", ";", ".", "@", "x+"}, "python"),
            (std::vector<TokenKind>{TokenKind::string_literal, TokenKind::string_literal, TokenKind::string_literal,
                                    TokenKind::number_literal, TokenKind::number_literal, TokenKind::op,
                                    TokenKind::punctuation, TokenKind::punctuation, TokenKind::other,
                                    TokenKind::identifier}));
}

TEST(Lexing, JavaProfile) {
  EXPECT_EQ(kinds({"public", "static", "int", "main", "null"}, "java"),
            (std::vector<TokenKind>{TokenKind::keyword, TokenKind::keyword, TokenKind::keyword,
                                    TokenKind::identifier, TokenKind::keyword}));
}

TEST(Lexing, UnknownLanguageFallsBackToGeneric) {
  EXPECT_EQ(kinds({"def", "if"}, "cobol"), (std::vector<TokenKind>{TokenKind::identifier, TokenKind::identifier}));
}

TEST(Lexing, TotalityAndKeywordMonotonicity) {
  std::vector<std::string> toks = {"def", "return", "while", "x", "+=", "(", "'s'", "1", "$", "_y", "True", "lambda"};
  auto py = lexing::classify_tokens(toks, "python");
  auto gen = lexing::classify_tokens(toks, "generic");
  ASSERT_EQ(py.size(), toks.size());
  ASSERT_EQ(gen.size(), toks.size());
  for (std::size_t i = 0; i < toks.size(); ++i) {
    EXPECT_EQ(py[i].text, toks[i]);
    if (py[i].kind == TokenKind::keyword)
      EXPECT_TRUE(gen[i].kind == TokenKind::identifier || gen[i].kind == TokenKind::other) << toks[i];
    else
      EXPECT_EQ(py[i].kind, gen[i].kind) << toks[i];
  }
}

TEST(Lexing, KeywordFilesAreData) {
  TempDir dir("kw");
  write_text(dir / "toy.txt", "# comment\nfoo\n\nbar\n");
  auto reg = lexing::KeywordRegistry::from_directory(dir.path());
  ASSERT_TRUE(reg.has("toy"));
  auto typed = lexing::classify_tokens(std::vector<std::string>{"foo", "bar", "baz"}, "toy", reg);
  EXPECT_EQ(typed[0].kind, TokenKind::keyword);
  EXPECT_EQ(typed[1].kind, TokenKind::keyword);
  EXPECT_EQ(typed[2].kind, TokenKind::identifier);
}

TEST(Corpus, LoadJsonlCountsValidLines) {
  TempDir dir("jsonl");
  write_text(dir / "a.jsonl",
             R"({"code_tokens":["def","f"],"docstring_tokens":["make","f"]})" "\n"
             R"({"code_tokens":["x"],"docstring_tokens":["y"],"code":"x","url":"u/1"})" "\n"
             R"({"code_tokens":["z"],"docstring_tokens":["w"]})" "\n");
  auto c = corpus::load_jsonl(dir / "a.jsonl", "python");
  ASSERT_EQ(c.pairs.size(), 3u);
  EXPECT_EQ(c.pairs[0].id, "python:1");
  EXPECT_EQ(c.pairs[1].raw_code.value(), "x");
  EXPECT_EQ(c.pairs[1].source, "u/1");
  EXPECT_EQ(c.pairs[2].query_tokens, std::vector<std::string>{"w"});
  EXPECT_EQ(c.skipped_lines, 0u);
}

TEST(Corpus, MalformedLinesAreSkippedAndCounted) {
  TempDir dir("jsonl");
  write_text(dir / "a.jsonl",
             R"({"code_tokens":["a"],"docstring_tokens":["b"]})" "\n"
             R"({"code_tokens":["a"]})" "\n"
             "not json\n\n");
  auto c = corpus::load_jsonl(dir / "a.jsonl", "python");
  EXPECT_EQ(c.pairs.size(), 1u);
  EXPECT_EQ(c.skipped_lines, 2u);

  write_text(dir / "b.jsonl",
             R"({"code_tokens":["a"],"docstring_tokens":["b"]})" "\n"
             R"({"code_tokens":[],"docstring_tokens":["b"]})" "\n");
  auto d = corpus::load_jsonl(dir / "b.jsonl", "python");
  ASSERT_EQ(d.pairs.size(), 1u);
  EXPECT_EQ(d.pairs[0].id, "python:1");
}

TEST(Corpus, NoValidLinesIsAnError) {
  TempDir dir("jsonl");
  write_text(dir / "bad.jsonl", "{}\n[1]\n");
  EXPECT_THROW(corpus::load_jsonl(dir / "bad.jsonl", "python"), DataError);
  EXPECT_THROW(corpus::load_jsonl(dir / "missing.jsonl", "python"), DataError);
}

TEST(Corpus, MergeSplitsKeepsIdsUniqueAndPoolClosed) {
  TempDir dir("splits");
  const std::string line = R"({"code_tokens":["a"],"docstring_tokens":["b"]})" "\n";
  write_text(dir / "train.jsonl", line + line);
  write_text(dir / "test.jsonl", line);
  std::map<corpus::Split, corpus::Corpus> parts;
  parts.emplace(corpus::Split::train, corpus::load_jsonl(dir / "train.jsonl", "java"));
  parts.emplace(corpus::Split::test, corpus::load_jsonl(dir / "test.jsonl", "java"));
  auto c = corpus::merge_splits(parts);
  EXPECT_EQ(c.pairs.size(), 3u);
  EXPECT_EQ(c.pairs[2].id, "java:test:1");
  EXPECT_EQ(c.candidate_pool, c.test);
  EXPECT_NO_THROW(c.validate());
}

TEST(Corpus, JsonRoundTrip) {
  corpus::Corpus c;
  c.pairs.push_back(testing_support::make_pair("a", {"x", "y"}, {"q"}));
  c.pairs.push_back(testing_support::make_pair("b", {"z"}, {"r", "s"}));
  c.pairs[1].raw_code = "z()";
  c.train = {0};
  c.test = {1};
  c.candidate_pool = {1};
  TempDir dir("corpus");
  corpus::save_corpus(c, dir / "c.json");
  auto d = corpus::load_corpus(dir / "c.json");
  ASSERT_EQ(d.pairs.size(), 2u);
  EXPECT_EQ(d.pairs[1].raw_code.value(), "z()");
  EXPECT_EQ(d.train, c.train);
  EXPECT_EQ(d.candidate_pool, c.candidate_pool);
  EXPECT_EQ(d.find("b").value(), 1u);
}

TEST(Corpus, ValidateRejectsDuplicateIdsAndOpenPool) {
  corpus::Corpus c;
  c.pairs.push_back(testing_support::make_pair("a", {"x"}, {"q"}));
  c.pairs.push_back(testing_support::make_pair("a", {"y"}, {"r"}));
  EXPECT_THROW(c.validate(), DataError);
  c.pairs[1].id = "b";
  c.test = {1};
  c.candidate_pool = {0};
  EXPECT_THROW(c.validate(), DataError);
}

TEST(Corpus, RandomSplitsAreSeededPartitions) {
  corpus::Corpus c;
  for (int i = 0; i < 50; ++i) c.pairs.push_back(testing_support::make_pair(std::to_string(i), {"x"}, {"q"}));
  auto d = c;
  corpus::assign_random_splits(c, 0.2, 0.2, 7);
  corpus::assign_random_splits(d, 0.2, 0.2, 7);
  EXPECT_EQ(c.train, d.train);
  EXPECT_EQ(c.test.size(), 10u);
  EXPECT_EQ(c.valid.size(), 10u);
  EXPECT_EQ(c.train.size() + c.valid.size() + c.test.size(), 50u);
}

TEST(Vocabulary, FrequencyOrderAfterReserved) {
  corpus::Corpus c;
  c.pairs.push_back(testing_support::make_pair("1", {"a", "a", "b"}, {"a"}));
  auto v = corpus::build_vocab(c, 20);
  const auto reserved = corpus::reserved_tokens();
  ASSERT_EQ(reserved.size(), 12u);
  ASSERT_EQ(v.size(), 14u);
  EXPECT_EQ(v.token(12), "a");
  EXPECT_EQ(v.token(13), "b");
  EXPECT_EQ(v.id("[PAD]"), 0);
  EXPECT_EQ(v.id("[identifier]"), 5 + 1);
  EXPECT_EQ(v.id("never-seen"), corpus::kUnk);
}

TEST(Vocabulary, EmptyExtraBudgetAndTieBreak) {
  corpus::Corpus c;
  c.pairs.push_back(testing_support::make_pair("1", {"y", "x", "y"}, {"x"}));
  auto only_reserved = corpus::build_vocab(c, 12);
  EXPECT_EQ(only_reserved.tokens(), corpus::reserved_tokens());
  auto one = corpus::build_vocab(c, 13);
  EXPECT_EQ(one.token(12), "x");
  EXPECT_FALSE(one.contains("y"));
  EXPECT_THROW(corpus::build_vocab(c, 11), std::invalid_argument);
}

TEST(Vocabulary, ReservedSurfaceFormsAreNotDuplicated) {
  corpus::Corpus c;
  c.pairs.push_back(testing_support::make_pair("1", {"[MASK]", "x"}, {"[identifier]"}));
  auto v = corpus::build_vocab(c, 100);
  EXPECT_EQ(v.size(), 13u);
  EXPECT_EQ(v.id("[MASK]"), corpus::kMask);
}

TEST(Vocabulary, DeterministicAndPersisted) {
  corpus::Corpus c;
  c.pairs.push_back(testing_support::make_pair("1", {"p", "q", "r", "q"}, {"s", "p"}));
  auto a = corpus::build_vocab(c, 50);
  auto b = corpus::build_vocab(c, 50);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hash(), b.hash());
  TempDir dir("vocab");
  a.save(dir / "v.json");
  auto loaded = corpus::Vocabulary::load(dir / "v.json");
  EXPECT_EQ(loaded, a);
  auto j = a.to_json();
  j["hash"] = "0000000000000000";
  EXPECT_THROW(corpus::Vocabulary::from_json(j), DataError);
}

TEST(Encode, StructureAndPadding) {
  corpus::Vocabulary v;
  auto s = corpus::encode_tokens(std::vector<std::string>{"x"}, v, 8);
  ASSERT_EQ(s.ids.size(), 8u);
  EXPECT_EQ(s.active(), 3u);
  EXPECT_EQ(s.ids[0], corpus::kCls);
  EXPECT_EQ(s.ids[1], corpus::kUnk);
  EXPECT_EQ(s.ids[2], corpus::kSep);
  for (std::size_t i = 3; i < 8; ++i) {
    EXPECT_EQ(s.ids[i], corpus::kPad);
    EXPECT_EQ(s.mask[i], 0);
  }
}

TEST(Encode, TruncationEndsWithSep) {
  corpus::Vocabulary v;
  std::vector<std::string> toks(200, "t");
  auto s = corpus::encode_tokens(toks, v, 128);
  ASSERT_EQ(s.ids.size(), 128u);
  EXPECT_EQ(s.ids.back(), corpus::kSep);
  EXPECT_EQ(s.active(), 128u);
  EXPECT_THROW(corpus::encode_tokens(std::vector<std::string>{}, v, 8), std::invalid_argument);
}

TEST(Encode, MaskCountProperty) {
  corpus::Vocabulary v;
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    const std::size_t max_len = std::uniform_int_distribution<std::size_t>(2, 48)(rng);
    std::vector<std::string> toks(n, "w");
    auto s = corpus::encode_tokens(toks, v, max_len);
    EXPECT_EQ(s.ids.size(), max_len);
    EXPECT_EQ(s.active(), std::min(n + 2, max_len));
  }
}
