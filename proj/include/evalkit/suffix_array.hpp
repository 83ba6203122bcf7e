#pragma once

// Suffix array construction by induced sorting (SA-IS), linear time.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <vector>

namespace evalkit {

namespace detail {

inline std::vector<int32_t> suffix_array_naive(const std::vector<int32_t>& s) {
  std::vector<int32_t> sa(s.size());
  std::iota(sa.begin(), sa.end(), 0);
  std::sort(sa.begin(), sa.end(), [&](int32_t a, int32_t b) {
    return std::lexicographical_compare(s.begin() + a, s.end(), s.begin() + b, s.end());
  });
  return sa;
}

/// s[i] in [0, upper].
inline std::vector<int32_t> sa_is(const std::vector<int32_t>& s, int32_t upper) {
  const auto n = static_cast<int32_t>(s.size());
  if (n == 0) return {};
  if (n < 10) return suffix_array_naive(s);

  std::vector<int32_t> sa(static_cast<std::size_t>(n));
  std::vector<bool> is_s(static_cast<std::size_t>(n), false);
  for (int32_t i = n - 2; i >= 0; --i)
    is_s[i] = s[i] == s[i + 1] ? is_s[i + 1] : s[i] < s[i + 1];

  // Bucket boundaries: sum_l[c] = start of c's bucket, sum_s[c] = start of
  // c's S-type sub-bucket.
  std::vector<int32_t> sum_l(static_cast<std::size_t>(upper) + 1, 0), sum_s(static_cast<std::size_t>(upper) + 1, 0);
  for (int32_t i = 0; i < n; ++i) {
    if (!is_s[i]) ++sum_s[s[i]];
    else ++sum_l[s[i] + 1];
  }
  for (int32_t c = 0; c <= upper; ++c) {
    sum_s[c] += sum_l[c];
    if (c < upper) sum_l[c + 1] += sum_s[c];
  }

  auto induce = [&](const std::vector<int32_t>& lms) {
    std::fill(sa.begin(), sa.end(), -1);
    std::vector<int32_t> buf(sum_s);
    for (int32_t d : lms)
      if (d != n) sa[buf[s[d]]++] = d;
    buf = sum_l;
    sa[buf[s[n - 1]]++] = n - 1;
    for (int32_t i = 0; i < n; ++i) {
      const int32_t v = sa[i];
      if (v >= 1 && !is_s[v - 1]) sa[buf[s[v - 1]]++] = v - 1;
    }
    buf = sum_l;
    for (int32_t i = n - 1; i >= 0; --i) {
      const int32_t v = sa[i];
      if (v >= 1 && is_s[v - 1]) sa[--buf[s[v - 1] + 1]] = v - 1;
    }
  };

  std::vector<int32_t> lms_index(static_cast<std::size_t>(n) + 1, -1);
  std::vector<int32_t> lms;
  for (int32_t i = 1; i < n; ++i) {
    if (!is_s[i - 1] && is_s[i]) {
      lms_index[i] = static_cast<int32_t>(lms.size());
      lms.push_back(i);
    }
  }
  const auto m = static_cast<int32_t>(lms.size());
  induce(lms);

  if (m) {
    std::vector<int32_t> sorted_lms;
    sorted_lms.reserve(lms.size());
    for (int32_t v : sa)
      if (lms_index[v] != -1) sorted_lms.push_back(v);

    // Name LMS substrings; equal substrings share a name.
    std::vector<int32_t> reduced(static_cast<std::size_t>(m));
    int32_t names = 0;
    reduced[lms_index[sorted_lms[0]]] = 0;
    for (int32_t i = 1; i < m; ++i) {
      int32_t l = sorted_lms[i - 1], r = sorted_lms[i];
      const int32_t end_l = lms_index[l] + 1 < m ? lms[lms_index[l] + 1] : n;
      const int32_t end_r = lms_index[r] + 1 < m ? lms[lms_index[r] + 1] : n;
      bool same = true;
      if (end_l - l != end_r - r) {
        same = false;
      } else {
        while (l < end_l && s[l] == s[r]) {
          ++l;
          ++r;
        }
        if (l == n || s[l] != s[r]) same = false;
      }
      if (!same) ++names;
      reduced[lms_index[sorted_lms[i]]] = names;
    }
    const auto reduced_sa = sa_is(reduced, names);
    for (int32_t i = 0; i < m; ++i) sorted_lms[i] = lms[reduced_sa[i]];
    induce(sorted_lms);
  }
  return sa;
}

}  // namespace detail

/// Suffix array of a byte string.
inline std::vector<int32_t> build_suffix_array(std::string_view text) {
  std::vector<int32_t> s(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) s[i] = static_cast<unsigned char>(text[i]);
  return detail::sa_is(s, 255);
}

/// Index range [first, last) of suffixes starting with `pattern`.
inline std::pair<std::size_t, std::size_t> suffix_range(std::string_view text, const std::vector<int32_t>& sa,
                                                        std::string_view pattern) {
  auto prefix_cmp = [&](int32_t pos) {
    const std::string_view suffix = text.substr(static_cast<std::size_t>(pos));
    return suffix.substr(0, pattern.size()).compare(pattern);
  };
  const auto lo = std::partition_point(sa.begin(), sa.end(), [&](int32_t p) { return prefix_cmp(p) < 0; });
  const auto hi = std::partition_point(lo, sa.end(), [&](int32_t p) { return prefix_cmp(p) == 0; });
  return {static_cast<std::size_t>(lo - sa.begin()), static_cast<std::size_t>(hi - sa.begin())};
}

}  // namespace evalkit
