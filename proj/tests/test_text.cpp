#include <gtest/gtest.h>

#include "evalkit/text.hpp"

using namespace evalkit;

TEST(Tokenize, LowercasesAndDropsPunctuation) {
  EXPECT_EQ(words("The Cat, sat."), (std::vector<std::string>{"the", "cat", "sat"}));
}

TEST(Tokenize, EmptyInput) {
  EXPECT_TRUE(words("").empty());
  EXPECT_TRUE(words("  ,;  ").empty());
}

TEST(Tokenize, SplitsOnHyphens) {
  EXPECT_EQ(words("CVE-2037-1234567"), (std::vector<std::string>{"cve", "2037", "1234567"}));
}

TEST(Tokenize, ComposesToNfc) {
  // "e" + combining acute and the precomposed form tokenize identically.
  EXPECT_EQ(words("cafe\xCC\x81"), words("caf\xC3\xA9"));
  EXPECT_EQ(words("Na\xC3\xAFve CAF\xC3\x89"), (std::vector<std::string>{"na\xC3\xAFve", "caf\xC3\xA9"}));
}

TEST(Tokenize, CharacterMode) {
  const auto seq = tokenize("Ab\xC3\xA9", TokenMode::character);
  EXPECT_EQ(seq.tokens, (std::vector<std::string>{"a", "b", "\xC3\xA9"}));
  EXPECT_EQ(seq.source_len_chars, 3u);
}

TEST(Normalize, CollapsesWhitespace) {
  EXPECT_EQ(normalize_for_matching("  Hello \t\n  World  "), "hello world");
  EXPECT_EQ(normalize_for_matching(""), "");
}

TEST(Text, SplitJoinTrim) {
  const auto parts = split_spaces("a bb  c");
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[1], "bb");
  EXPECT_EQ(join({"x", "y", "z"}, "-"), "x-y-z");
  EXPECT_EQ(trim("  padded\t"), "padded");
  EXPECT_EQ(trim(" \n "), "");
}

TEST(Hash, StableAndSeedSensitive) {
  static_assert(hash64("abc") == hash64("abc"));
  EXPECT_NE(hash64("abc"), hash64("abd"));
  EXPECT_NE(hash64("abc", 1), hash64("abc", 2));
  EXPECT_NE(hash_combine(1, 2), hash_combine(2, 1));
}

TEST(SplitMix64, ReferenceStream) {
  // First outputs of the reference splitmix64 generator seeded with 0.
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.next(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(rng.next(), 0x06c45d188009454fULL);
}

TEST(SplitMix64, BoundsAndUnit) {
  SplitMix64 rng(42);
  for (int i = 0; i < 10000; ++i) {
    EXPECT_LT(rng.below(7), 7u);
    const double u = rng.unit();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
