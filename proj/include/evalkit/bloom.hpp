#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "evalkit/errors.hpp"
#include "evalkit/text.hpp"

namespace evalkit {

/// Bloom filter over 64-bit key pairs with enhanced double hashing. Sized
/// with the optimal m = -n ln p / (ln 2)^2 bits and k = (m/n) ln 2 hashes.
class BloomFilter {
 public:
  BloomFilter() = default;

  BloomFilter(std::size_t expected_items, double fp_rate) {
    if (!(fp_rate > 0 && fp_rate < 1)) throw ConfigError("Bloom fp_rate must lie in (0,1)");
    const double n = static_cast<double>(std::max<std::size_t>(expected_items, 1));
    const double ln2 = std::log(2.0);
    num_bits_ = static_cast<uint64_t>(std::ceil(-n * std::log(fp_rate) / (ln2 * ln2)));
    num_bits_ = std::max<uint64_t>(num_bits_, 64);
    num_hashes_ = static_cast<uint32_t>(std::max(1.0, std::round(static_cast<double>(num_bits_) / n * ln2)));
    words_.assign((num_bits_ + 63) / 64, 0);
  }

  static BloomFilter from_parts(uint64_t num_bits, uint32_t num_hashes, std::vector<uint64_t> words, uint64_t inserted) {
    if (num_bits == 0 || num_hashes == 0 || words.size() != (num_bits + 63) / 64)
      throw Error("inconsistent Bloom filter payload");
    BloomFilter f;
    f.num_bits_ = num_bits;
    f.num_hashes_ = num_hashes;
    f.words_ = std::move(words);
    f.inserted_ = inserted;
    return f;
  }

  static std::pair<uint64_t, uint64_t> key_hashes(std::string_view key) {
    return {hash64(key, 0x5bd1e995ULL), hash64(key, 0x27d4eb2fULL) | 1ULL};
  }

  void insert(std::pair<uint64_t, uint64_t> h) {
    for_each_bit(h, [&](uint64_t bit) { words_[bit >> 6] |= 1ULL << (bit & 63); return true; });
    ++inserted_;
  }

  void insert(std::string_view key) { insert(key_hashes(key)); }

  bool might_contain(std::pair<uint64_t, uint64_t> h) const {
    bool all = true;
    for_each_bit(h, [&](uint64_t bit) {
      if (!(words_[bit >> 6] & (1ULL << (bit & 63)))) all = false;
      return all;
    });
    return all;
  }

  bool might_contain(std::string_view key) const { return might_contain(key_hashes(key)); }

  uint64_t num_bits() const { return num_bits_; }
  uint32_t num_hashes() const { return num_hashes_; }
  uint64_t inserted() const { return inserted_; }
  const std::vector<uint64_t>& words() const { return words_; }

 private:
  template <typename F>
  void for_each_bit(std::pair<uint64_t, uint64_t> h, F&& f) const {
    uint64_t a = h.first % num_bits_;
    uint64_t b = h.second % num_bits_;
    for (uint32_t i = 0; i < num_hashes_; ++i) {
      if (!f(a)) return;
      a = (a + b) % num_bits_;
      b = (b + i + 1) % num_bits_;
    }
  }

  uint64_t num_bits_ = 0;
  uint32_t num_hashes_ = 0;
  std::vector<uint64_t> words_;
  uint64_t inserted_ = 0;
};

}  // namespace evalkit
