#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sandwichr/textedit.hpp"

using namespace sandwichr;

namespace {

std::vector<std::string> chars(std::string_view s) {
  std::vector<std::string> out;
  for (char c : s) out.emplace_back(1, c);
  return out;
}

std::vector<oracle::SpanEdit> as_oracle(const std::vector<Edit>& edits) {
  std::vector<oracle::SpanEdit> out;
  for (const auto& e : edits) out.push_back({e.start, e.end, e.replacement});
  return out;
}

std::string random_string(std::mt19937_64& rng, size_t len, std::string_view alphabet) {
  std::string s;
  for (size_t i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
  return s;
}

}  // namespace

TEST(ExtractEdits, IdentityIsEmpty) {
  EXPECT_TRUE(extract_edits("abc", "abc").empty());
  EXPECT_TRUE(extract_edits("", "").empty());
  EXPECT_TRUE(extract_edits("red shoes", "red shoes").empty());
}

TEST(ExtractEdits, SingleSubstitution) {
  const auto set = extract_edits("abXd", "abcd");
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.edits[0], (Edit{2, 3, {"c"}}));
}

TEST(ExtractEdits, Insertion) {
  const auto set = extract_edits("abd", "abcd");
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.edits[0], (Edit{2, 2, {"c"}}));
}

TEST(ExtractEdits, DeletionOfRepeatedUnitIsLeftmost) {
  const auto set = extract_edits("abbc", "abc");
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.edits[0], (Edit{1, 2, {}}));
}

TEST(ExtractEdits, SubstitutionPreferredOverDeleteInsert) {
  const auto ops = align_units(chars("ab"), chars("ac"));
  EXPECT_EQ(ops, (std::vector<AlignOp>{AlignOp::Match, AlignOp::Sub}));
}

TEST(ExtractEdits, AdjacentOperationsMergeIntoOneSpan) {
  const auto set = extract_edits("abcd", "aXYd");
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.edits[0], (Edit{1, 3, {"X", "Y"}}));
}

TEST(ExtractEdits, TokenModeKeepsWhitespaceAsUnits) {
  const auto set = extract_edits("red  shose", "red shoes");
  EXPECT_EQ(set.mode, text::UnitMode::Token);
  EXPECT_EQ(set.source_units, (std::vector<std::string>{"red", "  ", "shose"}));
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.edits[0], (Edit{1, 3, {" ", "shoes"}}));
  EXPECT_EQ(apply_edits(set), "red shoes");
}

TEST(ExtractEdits, GraphemeModeForCjk) {
  const auto set = extract_edits("儿童手温杯", "儿童保温杯");
  EXPECT_EQ(set.mode, text::UnitMode::Grapheme);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.edits[0], (Edit{2, 3, {"保"}}));
}

TEST(ExtractEdits, MatchesBruteForceOnSmallRandomPairs) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 3000; ++k) {
    const auto a = chars(random_string(rng, rng() % 7, "abc"));
    const auto b = chars(random_string(rng, rng() % 7, "abc"));
    oracle::BruteAligner brute(a, b);
    const auto ops = brute.solve();
    const auto lib = align_units(a, b);
    ASSERT_EQ(lib.size(), ops.size());
    for (size_t i = 0; i < ops.size(); ++i) ASSERT_EQ(static_cast<int>(lib[i]), static_cast<int>(ops[i]));
    ASSERT_EQ(as_oracle(extract_unit_edits(a, b)), oracle::spans(ops, b));
  }
}

TEST(ExtractEdits, RoundTripAndEditInvariantsOnRandomStrings) {
  std::mt19937_64 rng(5);
  const std::vector<std::string_view> alphabets{"ab ", "abcd  ", "xyz"};
  for (int k = 0; k < 5000; ++k) {
    const auto alpha = alphabets[k % alphabets.size()];
    const std::string s = random_string(rng, rng() % 16, alpha);
    const std::string t = random_string(rng, rng() % 16, alpha);
    const auto set = extract_edits(s, t);
    ASSERT_EQ(apply_edits(set), t) << "s=" << s << " t=" << t;
    size_t prev_end = 0;
    for (size_t i = 0; i < set.edits.size(); ++i) {
      const auto& e = set.edits[i];
      ASSERT_LE(e.start, e.end);
      ASSERT_LE(e.end, set.source_units.size());
      ASSERT_TRUE(e.end > e.start || !e.replacement.empty());
      const std::vector<std::string> slice(set.source_units.begin() + static_cast<std::ptrdiff_t>(e.start),
                                           set.source_units.begin() + static_cast<std::ptrdiff_t>(e.end));
      ASSERT_NE(slice, e.replacement);
      if (i > 0) {
        ASSERT_GT(e.start, prev_end);  // maximal spans never touch
      }
      prev_end = e.end;
    }
  }
}

TEST(FHalf, TaggedExamples) {
  EXPECT_DOUBLE_EQ(f_half_score("abcd", "abXd", "abcd"), 1.0);
  EXPECT_DOUBLE_EQ(f_half_score("abXd", "abXd", "abcd"), 0.0);
  // gold fixes X; hypothesis fixes X and also rewrites a correct unit
  EXPECT_NEAR(f_half_score("Ybcd", "abXd", "abcd"), 5.0 / 9.0, 1e-12);
  EXPECT_NEAR(f_half_score("Ybcd", "abXd", "abcd"), oracle::f_half(1, 2, 1), 1e-15);
}

TEST(FHalf, NonAdjacentSpuriousEditKeepsSpansSeparate) {
  // gold: one substitution at 3; hypothesis adds a separate one at 0
  const auto hyp = extract_edits("abcXe", "Zbcde");
  EXPECT_EQ(hyp.size(), 2u);
  EXPECT_NEAR(f_half_score("Zbcde", "abcXe", "abcde"), oracle::f_half(1, 2, 1), 1e-12);
}

TEST(FHalf, Conventions) {
  EXPECT_DOUBLE_EQ(f_half_score("same", "same", "same"), 1.0);    // both empty
  EXPECT_DOUBLE_EQ(f_half_score("sXme", "same", "same"), 0.0);    // gold empty
  EXPECT_DOUBLE_EQ(f_half_score("abYd", "abXd", "abcd"), 0.0);    // TP = 0
}

TEST(FHalf, PerfectCorrectionScoresOne) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 500; ++k) {
    const std::string clean = random_string(rng, 1 + rng() % 10, "abcd");
    const std::string noise = random_string(rng, 1 + rng() % 10, "abcd");
    if (clean == noise) continue;
    ASSERT_DOUBLE_EQ(f_half_score(clean, noise, clean), 1.0);
  }
}

TEST(FHalf, OneOnlyForEqualEditSets) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 3000; ++k) {
    const std::string noise = random_string(rng, rng() % 7, "abc");
    const std::string clean = random_string(rng, rng() % 7, "abc");
    const std::string hyp = random_string(rng, rng() % 7, "abc");
    const bool same = extract_edits(noise, hyp).edits == extract_edits(noise, clean).edits;
    ASSERT_EQ(f_half_score(hyp, noise, clean) == 1.0, same);
  }
}

TEST(FHalf, SpuriousEditNeverIncreasesScore) {
  std::mt19937_64 rng(21);
  int checked = 0;
  for (int k = 0; k < 20000; ++k) {
    const std::string noise = random_string(rng, 4 + rng() % 8, "abcd");
    const std::string clean = random_string(rng, 4 + rng() % 8, "abcd");
    const std::string hyp = random_string(rng, 4 + rng() % 8, "abcd");
    auto set = extract_edits(noise, hyp);
    // a substitution at a source position not touched by, nor adjacent to, any existing edit
    std::vector<bool> busy(set.source_units.size() + 2, false);
    for (const auto& e : set.edits)
      for (size_t i = e.start; i <= e.end + 1 && i < busy.size(); ++i) busy[i] = true;
    for (const auto& e : set.edits)
      if (e.start > 0) busy[e.start - 1] = true;
    std::optional<size_t> spot;
    for (size_t i = 0; i < set.source_units.size(); ++i)
      if (!busy[i]) spot = i;
    if (!spot) continue;
    const std::string unit = set.source_units[*spot] == "Q" ? "R" : "Q";
    set.edits.push_back(Edit{*spot, *spot + 1, {unit}});
    std::sort(set.edits.begin(), set.edits.end());
    const std::string worse = apply_edits(set);
    // only meaningful when the minimal alignment of the worse string keeps the added edit
    if (extract_edits(noise, worse).edits != set.edits) continue;
    ++checked;
    ASSERT_LE(f_half_score(worse, noise, clean), f_half_score(hyp, noise, clean) + 1e-15)
        << noise << " / " << clean << " / " << hyp << " / " << worse;
  }
  EXPECT_GT(checked, 1000);
}

TEST(FHalf, GraphemeUnitsCreditPartialWordFixes) {
  // two separate typos inside one word; the hypothesis fixes one of them
  EXPECT_DOUBLE_EQ(f_half_score("red shoxs", "red xhoxs", "red shoes"), 0.0);
  EXPECT_NEAR(f_half_score("red shoxs", "red xhoxs", "red shoes", text::UnitMode::Grapheme),
              oracle::f_half(1, 1, 2), 1e-12);
  EXPECT_DOUBLE_EQ(f_half_score("red shoes", "red xhoxs", "red shoes", text::UnitMode::Grapheme), 1.0);
}

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy("abcd", "abcd"), 1);
  EXPECT_EQ(accuracy("abcd ", "abcd"), 1);
  EXPECT_EQ(accuracy("abXd", "abcd"), 0);
  EXPECT_EQ(accuracy("e\xCC\x81", "\xC3\xA9"), 1);  // NFD vs NFC
}

TEST(Osa, AgreesWithOracle) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 2000; ++k) {
    const auto a = chars(random_string(rng, rng() % 7, "abc"));
    const auto b = chars(random_string(rng, rng() % 7, "abc"));
    ASSERT_EQ(osa_distance(a, b), oracle::osa(a, b));
  }
  EXPECT_EQ(osa_distance(chars("ab"), chars("ba")), 1u);
}
