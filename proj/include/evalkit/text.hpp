#pragma once

// Text normalization, tokenization and stable hashing shared by every
// metric and scan in evalkit.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/locid.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

namespace evalkit {

enum class TokenMode { word, character };

struct TokenSequence {
  std::vector<std::string> tokens;
  std::size_t source_len_chars = 0;  // code points in the untouched input
};

namespace detail {

inline const icu::Normalizer2& nfc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) {
    throw std::runtime_error("ICU NFC normalizer unavailable");
  }
  return *n;
}

inline icu::UnicodeString nfc_lower_ustr(std::string_view text) {
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString out = nfc().normalize(s, status);
  out.toLower(icu::Locale::getRoot());
  // Lowercasing can produce sequences that are no longer composed.
  out = nfc().normalize(out, status);
  if (U_FAILURE(status)) throw std::runtime_error("NFC normalization failed");
  return out;
}

inline void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool err = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, U8_MAX_LENGTH, c, err);
  if (!err) out.append(buf, static_cast<std::size_t>(len));
}

inline bool is_token_char(UChar32 c) {
  return u_isalnum(c) || (U_GET_GC_MASK(c) & U_GC_M_MASK) != 0;
}

}  // namespace detail

/// Decodes UTF-8 into code points. Invalid bytes become U+FFFD.
inline std::vector<UChar32> code_points(std::string_view text) {
  std::vector<UChar32> cps;
  cps.reserve(text.size());
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto n = static_cast<int32_t>(text.size());
  for (int32_t i = 0; i < n;) {
    UChar32 c;
    U8_NEXT(s, i, n, c);
    cps.push_back(c < 0 ? 0xFFFD : c);
  }
  return cps;
}

inline std::string to_utf8(const std::vector<UChar32>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (UChar32 c : cps) detail::append_utf8(out, c);
  return out;
}

inline std::size_t count_code_points(std::string_view text) {
  return code_points(text).size();
}

/// NFC-normalized, lowercased copy of `text`.
inline std::string nfc_lower(std::string_view text) {
  std::string out;
  detail::nfc_lower_ustr(text).toUTF8String(out);
  return out;
}

/// Contamination-scan normalization: NFC, lowercase, whitespace runs
/// collapsed to one ASCII space, trimmed.
inline std::string normalize_for_matching(std::string_view text) {
  const icu::UnicodeString s = detail::nfc_lower_ustr(text);
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    detail::append_utf8(out, c);
  }
  return out;
}

/// Word mode: NFC + lowercase, split on maximal runs of characters that
/// are neither letters, digits nor combining marks. Character mode: one
/// token per code point of the normalized text.
inline TokenSequence tokenize(std::string_view text, TokenMode mode = TokenMode::word) {
  TokenSequence seq;
  seq.source_len_chars = count_code_points(text);
  const icu::UnicodeString s = detail::nfc_lower_ustr(text);
  std::string current;
  for (int32_t i = 0; i < s.length();) {
    const UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (mode == TokenMode::character) {
      std::string tok;
      detail::append_utf8(tok, c);
      seq.tokens.push_back(std::move(tok));
      continue;
    }
    if (detail::is_token_char(c)) {
      detail::append_utf8(current, c);
    } else if (!current.empty()) {
      seq.tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) seq.tokens.push_back(std::move(current));
  return seq;
}

inline std::vector<std::string> words(std::string_view text) {
  return tokenize(text, TokenMode::word).tokens;
}

/// Splits on ASCII spaces; input is expected to be normalize_for_matching output.
inline std::vector<std::string_view> split_spaces(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t next = text.find(' ', pos);
    const std::size_t end = next == std::string_view::npos ? text.size() : next;
    if (end > pos) parts.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return parts;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(first, last - first + 1));
}

// ---------------------------------------------------------------------------
// Stable hashing. Persisted indexes depend on these values, so they must
// not change between platforms or releases.

inline constexpr uint64_t mix64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

inline constexpr uint64_t hash64(std::string_view bytes, uint64_t seed = 0) {
  uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed + 0x9e3779b97f4a7c15ULL);
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(h ^ bytes.size());
}

inline constexpr uint64_t hash_combine(uint64_t a, uint64_t b) {
  return mix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

/// splitmix64 stream; fully specified so seeded output is portable.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound) by rejection; bound must be > 0.
  uint64_t below(uint64_t bound) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t r;
    do {
      r = next();
    } while (r >= limit);
    return r % bound;
  }

  /// Uniform real in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  uint64_t state_;
};

}  // namespace evalkit
