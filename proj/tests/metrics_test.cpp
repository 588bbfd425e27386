#include <gtest/gtest.h>

#include <random>

#include "g2p/error.hpp"
#include "g2p/metrics.hpp"
#include "oracles.hpp"

namespace g2p {
namespace {

using Phones = std::vector<std::string>;

struct SegmentCase {
  const char* ipa;
  Phones expected;
};

// Hand-labelled: diacritics and modifier letters stay with their base,
// tie bars bind two symbols into one phone.
const std::vector<SegmentCase> kFixture = {
    {"kʰat", {"kʰ", "a", "t"}},
    {"t͡ʃa", {"t͡ʃ", "a"}},
    {"d͡ʒɔɪ", {"d͡ʒ", "ɔ", "ɪ"}},
    {"aːb", {"aː", "b"}},
    {"pʲet", {"pʲ", "e", "t"}},
    {"ŋ̊a", {"ŋ̊", "a"}},
    {"n̩", {"n̩"}},
    {"ɛ̃ʁ", {"ɛ̃", "ʁ"}},
    {"tʷʰa", {"tʷʰ", "a"}},
    {"ʔa", {"ʔ", "a"}},
    {"t͡sʲ", {"t͡sʲ"}},
    {"a͜i", {"a͜i"}},
    {"ɡˠ", {"ɡˠ"}},
    {"bˀa", {"bˀ", "a"}},
    {"ʃːo", {"ʃː", "o"}},
    {"ɑ̃ː", {"ɑ̃ː"}},
    {"k͡pa", {"k͡p", "a"}},
    {"i̯a", {"i̯", "a"}},
    {"ʈʂʰ", {"ʈ", "ʂʰ"}},
    {"ɻ̍", {"ɻ̍"}},
    {"θɪŋk", {"θ", "ɪ", "ŋ", "k"}},
    {"ʏʉ", {"ʏ", "ʉ"}},
    {"œ̞", {"œ̞"}},
    {"xʷ", {"xʷ"}},
    {"ɦⁿ", {"ɦⁿ"}},
    {"ˈkat", {"ˈ", "k", "a", "t"}},
    {"a.b", {"a", ".", "b"}},
    {"k æ t", {"k", "æ", "t"}},
    {"t͡ʃ  aː", {"t͡ʃ", "aː"}},
    {"", {}},
};

TEST(SegmentTest, Fixture) {
  ASSERT_EQ(kFixture.size(), 30u);
  for (const auto& c : kFixture) {
    EXPECT_EQ(segment_phones(c.ipa).phones, c.expected) << c.ipa;
  }
}

TEST(SegmentProperty, ConcatenationRestoresInput) {
  for (const auto& c : kFixture) {
    const std::string in = c.ipa;
    if (in.find(' ') != std::string::npos) continue;
    const auto seq = segment_phones(in);
    EXPECT_EQ(seq.joined(), in);
    for (const auto& p : seq.phones) EXPECT_FALSE(p.empty());
  }
}

TEST(EditDistanceTest, MatchesBruteForce) {
  const Phones alphabet = {"a", "b", "kʰ", "t͡ʃ"};
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    Phones a(rng() % 7), b(rng() % 7);
    for (auto& p : a) p = alphabet[rng() % 4];
    for (auto& p : b) p = alphabet[rng() % 4];
    ASSERT_EQ(edit_distance(a, b), testing::brute_levenshtein(a, b));
  }
}

std::vector<PhoneSequence> refs(std::initializer_list<const char*> list) {
  std::vector<PhoneSequence> out;
  for (const char* r : list) out.push_back(segment_phones(r));
  return out;
}

TEST(PerTest, Examples) {
  EXPECT_EQ(phone_error_rate(segment_phones("k a t"), refs({"k a t"})), 0.0);
  EXPECT_NEAR(phone_error_rate(segment_phones("k a t"), refs({"k æ t"})), 100.0 / 3, 1e-12);
  EXPECT_EQ(phone_error_rate(segment_phones("a b c"), refs({"a"})), 200.0);
  EXPECT_EQ(phone_error_rate(segment_phones("k a t"), refs({"x y z", "k a"})), 50.0);
}

TEST(PerTest, InvalidReferences) {
  for (auto bad : {refs({}), refs({"a", ""})}) {
    try {
      phone_error_rate(segment_phones("a"), bad);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidReference);
    }
  }
}

TEST(BestReferenceTest, EarliestTieAndExactRatio) {
  // 1/3 and 2/6 tie exactly; the first one wins.
  const auto m = best_reference(segment_phones("a b c"), refs({"a b d", "a b c d e f"}));
  EXPECT_EQ(m.index, 0u);
  EXPECT_EQ(m.edits, 1u);
  EXPECT_EQ(m.ref_length, 3u);
}

TEST(WerTest, Counting) {
  const std::vector<std::string> preds = {"kat", "k a t", "dɔɡ", "x"};
  const std::vector<std::vector<std::string>> ok = {{"k a t"}, {"kat"}, {"d ɔ ɡ", "dɑɡ"}, {"x"}};
  EXPECT_EQ(word_error_rate(preds, ok), 0.0);
  auto one_wrong = ok;
  one_wrong[3] = {"y"};
  EXPECT_EQ(word_error_rate(preds, one_wrong), 25.0);
  const std::vector<std::vector<std::string>> none = {{"a"}, {"b"}, {"c"}, {"d"}};
  EXPECT_EQ(word_error_rate(preds, none), 100.0);
  const std::vector<std::vector<std::string>> short_refs = {{"a"}};
  try {
    word_error_rate(preds, short_refs);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
}

TEST(SpearmanTest, Examples) {
  const std::vector<double> x = {1, 2, 3};
  EXPECT_NEAR(spearman_rho(x, std::vector<double>{10, 20, 30}), 1.0, 1e-15);
  EXPECT_NEAR(spearman_rho(x, std::vector<double>{3, 2, 1}), -1.0, 1e-15);
  const std::vector<double> tx = {1, 1, 2}, ty = {1, 2, 3};
  EXPECT_NEAR(spearman_rho(tx, ty), testing::rank_pearson(tx, ty), 1e-12);
  EXPECT_NEAR(spearman_rho(tx, ty), std::sqrt(3.0) / 2, 1e-12);
  EXPECT_EQ(fractional_ranks(tx), (std::vector<double>{1.5, 1.5, 3}));
}

TEST(SpearmanTest, Undefined) {
  const std::vector<double> one = {1}, flat = {2, 2, 2}, x = {1, 2, 3};
  for (auto [a, b] : {std::pair{one, one}, std::pair{flat, x}}) {
    try {
      spearman_rho(a, b);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kUndefinedCorrelation);
    }
  }
}

TEST(SpearmanProperty, AgreesWithOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 12;
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = static_cast<double>(rng() % 5);
    for (auto& v : y) v = static_cast<double>(rng() % 5);
    const double ref = testing::rank_pearson(x, y);
    if (!std::isfinite(ref)) continue;
    const double rho = spearman_rho(x, y);
    ASSERT_NEAR(rho, ref, 1e-12);
    ASSERT_LE(std::abs(rho), 1.0 + 1e-15);
  }
}

TEST(ScoreTest, MicroVersusMacro) {
  // Lengths 1 and 9 with 1 and 0 errors.
  const std::vector<ScoredWord> words = {{"w1", "b", {"a"}, false},
                                         {"w2", "a b c d e f g h i", {"a b c d e f g h i"}, false}};
  const auto s = score_language(LanguageTag("xx"), words);
  EXPECT_EQ(s.edit_ops, 1u);
  EXPECT_EQ(s.reference_phones, 10u);
  EXPECT_DOUBLE_EQ(s.per, 10.0);
  EXPECT_DOUBLE_EQ(s.word_averaged_per, 50.0);
  EXPECT_DOUBLE_EQ(s.wer, 50.0);
}

TEST(ScoreTest, FailedWordCountsAsDeletion) {
  const std::vector<ScoredWord> words = {{"w", "", {"a b c"}, true}};
  const auto s = score_language(LanguageTag("xx"), words);
  EXPECT_EQ(s.per, 100.0);
  EXPECT_EQ(s.wer, 100.0);
  EXPECT_EQ(s.failed_words, 1u);
}

TEST(ReportTest, Aggregates) {
  LanguageScore a{LanguageTag("bb"), 10, 1, 10, 5, 0, 10.0, 50.0, 0};
  LanguageScore b{LanguageTag("aa"), 30, 90, 90, 30, 0, 100.0, 100.0, 0};
  auto report = make_report({a, b});
  EXPECT_EQ(report.rows[0].language.code(), "aa");
  EXPECT_DOUBLE_EQ(report.per, 55.0);
  EXPECT_DOUBLE_EQ(report.wer, 75.0);
  EXPECT_DOUBLE_EQ(report.micro_per, 91.0);
  EXPECT_DOUBLE_EQ(report.micro_wer, 87.5);
  EXPECT_EQ(make_report({a}).per, a.per);
  EXPECT_THROW(make_report({a, a}), Error);
  EXPECT_THROW(make_report({}), Error);

  const std::vector<std::pair<LanguageTag, std::size_t>> sizes = {{LanguageTag("aa"), 100},
                                                                   {LanguageTag("bb"), 1000}};
  attach_correlation(report, sizes);
  ASSERT_TRUE(report.spearman.has_value());
  EXPECT_DOUBLE_EQ(*report.spearman, -1.0);
  const auto j = report.to_json();
  EXPECT_EQ(j["languages"].size(), 2u);
  EXPECT_EQ(j["aggregate"]["per"], 55.0);
  EXPECT_NE(report.to_text().find("10.0/50.0"), std::string::npos);
}

TEST(ReportTest, UnclampedPer) {
  const std::vector<ScoredWord> words = {{"w", "a b c", {"a"}, false}};
  EXPECT_EQ(score_language(LanguageTag("xx"), words).per, 200.0);
}

}  // namespace
}  // namespace g2p
