#pragma once

// Sample sizing, paired hypothesis tests (McNemar, paired t, Wilcoxon
// signed-rank), confidence intervals and the distribution functions they
// need.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evalkit/errors.hpp"

namespace evalkit::stats {

// ---------------------------------------------------------------------------
// Distributions

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse standard normal CDF. Acklam's rational approximation (relative
/// error < 1.2e-9) followed by one Halley step against erfc, which brings the
/// error to the level of double rounding.
inline double normal_quantile(double p) {
  if (!(p > 0 && p < 1)) {
    if (p == 0) return -std::numeric_limits<double>::infinity();
    if (p == 1) return std::numeric_limits<double>::infinity();
    throw InvalidArgument("normal_quantile requires p in [0,1]");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  if (x > (a + 1) / (a + b + 2)) return 1.0 - incomplete_beta(b, a, 1 - x);

  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double f = 1, c = 1, d = 0;
  for (int i = 0; i <= 400; ++i) {
    const int m = i / 2;
    double numerator;
    if (i == 0) {
      numerator = 1;
    } else if (i % 2 == 0) {
      numerator = (m * (b - m) * x) / ((a + 2.0 * m - 1) * (a + 2.0 * m));
    } else {
      numerator = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1));
    }
    d = 1 + numerator * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1 / d;
    c = 1 + numerator / c;
    if (std::abs(c) < tiny) c = tiny;
    const double cd = c * d;
    f *= cd;
    if (std::abs(1 - cd) < eps) break;
  }
  return std::exp(ln_front) * (f - 1) / a;
}

/// Student t CDF with `df` degrees of freedom.
inline double student_t_cdf(double t, double df) {
  if (!(df > 0)) throw InvalidArgument("student_t_cdf requires df > 0");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(df / 2, 0.5, x);
  return t >= 0 ? 1 - tail : tail;
}

/// Two-sided tail probability P(|T| >= |t|).
inline double student_t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return std::min(1.0, incomplete_beta(df / 2, 0.5, df / (df + t * t)));
}

/// Inverse Student t CDF, by bracketing and bisection on student_t_cdf.
inline double student_t_quantile(double p, double df) {
  if (!(p > 0 && p < 1)) throw InvalidArgument("student_t_quantile requires p in (0,1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1 - p, df);
  double lo = 0, hi = std::max(1.0, normal_quantile(p));
  while (student_t_cdf(hi, df) < p) {
    lo = hi;
    hi *= 2;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// P(X <= k) for X ~ Binomial(n, 1/2).
inline double binomial_half_cdf(long k, long n) {
  if (k < 0) return 0.0;
  if (k >= n) return 1.0;
  double sum = 0;
  const double ln2n = static_cast<double>(n) * std::log(2.0);
  for (long i = 0; i <= k; ++i) {
    sum += std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - ln2n);
  }
  return std::min(1.0, sum);
}

/// Upper tail of the chi-square distribution with one degree of freedom.
inline double chi_square1_sf(double x) {
  if (x <= 0) return 1.0;
  return std::erfc(std::sqrt(x / 2));
}

// ---------------------------------------------------------------------------
// Sample size

struct SampleSizeSpec {
  std::optional<double> confidence;  // two-sided, e.g. 0.95
  std::optional<double> z;           // or the z-score directly
  double expected_metric = 0.5;      // m-hat
  double margin = 0.05;              // epsilon

  double z_score() const {
    if (confidence.has_value() == z.has_value())
      throw InvalidArgument("supply exactly one of confidence or z");
    if (z) {
      if (!(*z > 0)) throw InvalidArgument("z must be > 0");
      return *z;
    }
    if (!(*confidence > 0 && *confidence < 1)) throw InvalidArgument("confidence must lie in (0,1)");
    return normal_quantile((1 + *confidence) / 2);
  }
};

struct SampleSize {
  long long n = 0;
  double z = 0;
  double exact = 0;  // value before rounding up
  bool degenerate = false;
  std::string note;
};

/// n = ceil(z^2 * m(1-m) / eps^2). Values within 1e-9 (relative) of an
/// integer are not bumped to the next integer by rounding noise.
inline SampleSize required_sample_size(const SampleSizeSpec& spec) {
  const double z = spec.z_score();
  const double m = spec.expected_metric;
  const double eps = spec.margin;
  if (!(eps > 0 && eps < 1)) throw InvalidArgument("margin of error must lie in (0,1)");
  if (!(m >= 0 && m <= 1)) throw InvalidArgument("expected metric must lie in [0,1]");
  SampleSize out;
  out.z = z;
  if (m == 0 || m == 1) {
    out.degenerate = true;
    out.note = "expected metric at 0 or 1 has zero variance; sample size degenerates to 0";
    return out;
  }
  out.exact = z * z * m * (1 - m) / (eps * eps);
  out.n = static_cast<long long>(std::ceil(out.exact * (1 - 1e-9)));
  return out;
}

// ---------------------------------------------------------------------------
// Test results

struct EffectSize {
  std::string label;
  std::optional<double> value;  // empty when undefined (e.g. zero variance)
};

struct TestResult {
  std::string test_name;
  double statistic = 0;
  double p_value = 1;
  long long n_effective = 0;
  EffectSize effect_size;
  std::map<double, bool> significant_at;
  std::string method_note;  // "exact" or "approximate: ..."
  bool degenerate = false;
  std::vector<std::string> notes;
};

inline const std::vector<double>& default_alphas() {
  static const std::vector<double> a = {0.01, 0.05, 0.10};
  return a;
}

inline void finalize(TestResult& r, const std::vector<double>& alphas = default_alphas()) {
  r.p_value = std::clamp(r.p_value, 0.0, 1.0);
  r.significant_at.clear();
  for (double a : alphas) r.significant_at[a] = r.p_value < a;
}

/// McNemar's test on paired binary outcomes. b counts (A=1, B=0) pairs and
/// c counts (A=0, B=1). Exact two-sided binomial test when b + c < 25,
/// otherwise chi-square with continuity correction. The reported statistic
/// is always the continuity-corrected chi-square max(|b-c|-1, 0)^2/(b+c).
/// Effect size is the discordant odds ratio b/c, with 0.5 added to both
/// counts when either is zero.
inline TestResult mcnemar_counts(long long b, long long c) {
  if (b < 0 || c < 0) throw InvalidArgument("McNemar counts must be non-negative");
  TestResult r;
  r.test_name = "mcnemar";
  r.n_effective = b + c;
  r.effect_size.label = "odds_ratio_b_over_c";
  const long long n = b + c;
  if (n == 0) {
    r.statistic = 0;
    r.p_value = 1;
    r.degenerate = true;
    r.method_note = "exact";
    r.notes.push_back("no discordant pairs");
    r.effect_size.value = 1.0;
    finalize(r);
    return r;
  }
  const double diff = std::max<double>(std::llabs(b - c) - 1.0, 0.0);
  r.statistic = diff * diff / static_cast<double>(n);
  if (n < 25) {
    r.method_note = "exact";
    r.p_value = std::min(1.0, 2 * binomial_half_cdf(std::min(b, c), n));
  } else {
    r.method_note = "approximate: chi-square with continuity correction";
    r.p_value = chi_square1_sf(r.statistic);
  }
  r.effect_size.value = (b == 0 || c == 0) ? (b + 0.5) / (c + 0.5)
                                           : static_cast<double>(b) / static_cast<double>(c);
  finalize(r);
  return r;
}

inline TestResult mcnemar(std::span<const std::pair<int, int>> pairs) {
  if (pairs.empty()) throw InvalidArgument("McNemar needs at least one pair");
  long long b = 0, c = 0;
  for (const auto& [a, bb] : pairs) {
    if ((a != 0 && a != 1) || (bb != 0 && bb != 1)) throw InvalidArgument("McNemar outcomes must be 0 or 1");
    if (a == 1 && bb == 0) ++b;
    if (a == 0 && bb == 1) ++c;
  }
  return mcnemar_counts(b, c);
}

inline void check_paired(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("paired samples must have equal length");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw InvalidArgument("paired samples must be finite");
}

/// Two-tailed paired t-test on d = x - y. Differences whose spread is
/// below 1e-12 of their magnitude count as zero-variance.
inline TestResult paired_t(std::span<const double> xs, std::span<const double> ys) {
  check_paired(xs, ys);
  const std::size_t n = xs.size();
  if (n < 2) throw InvalidArgument("paired t-test needs n >= 2");
  std::vector<double> d(n);
  double scale = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = xs[i] - ys[i];
    scale = std::max(scale, std::abs(d[i]));
  }
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TestResult r;
  r.test_name = "paired_t";
  r.n_effective = static_cast<long long>(n);
  r.effect_size.label = "cohens_dz";
  r.method_note = "exact: Student t with n-1 df";
  if (sd <= 1e-12 * scale || sd == 0) {
    r.degenerate = true;
    if (scale == 0) {
      r.statistic = 0;
      r.p_value = 1;
      r.effect_size.value = 0.0;
      r.notes.push_back("all differences are zero");
    } else {
      r.statistic = std::copysign(std::numeric_limits<double>::infinity(), mean);
      r.p_value = 0;
      r.notes.push_back("zero-variance differences with nonzero mean");
    }
    finalize(r);
    return r;
  }
  r.statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p_value = student_t_two_sided_p(r.statistic, static_cast<double>(n - 1));
  r.effect_size.value = mean / sd;
  finalize(r);
  return r;
}

enum class WilcoxonMethod { automatic, exact, normal };

/// Average ranks of |d| (1-based); values within 1e-9 relative are ties.
inline std::vector<double> average_ranks(const std::vector<double>& abs_d, std::vector<std::size_t>* tie_sizes = nullptr) {
  const std::size_t n = abs_d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return abs_d[a] < abs_d[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && abs_d[order[j]] - abs_d[order[i]] <= 1e-9 * abs_d[order[j]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    if (tie_sizes && j - i > 1) tie_sizes->push_back(j - i);
    i = j;
  }
  return ranks;
}

/// Wilcoxon signed-rank test on d = x - y. Zero differences are dropped,
/// ties get average ranks, W = min(W+, W-). Exact null distribution (by
/// subset-sum over doubled ranks) for n <= 20, otherwise the normal
/// approximation with tie-corrected variance and continuity correction.
/// Effect size is the matched-pairs rank-biserial (W+ - W-)/(W+ + W-).
inline TestResult wilcoxon_signed_rank(std::span<const double> xs, std::span<const double> ys,
                                       WilcoxonMethod method = WilcoxonMethod::automatic) {
  check_paired(xs, ys);
  if (xs.empty()) throw InvalidArgument("Wilcoxon test needs n >= 1");
  std::vector<double> d;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = xs[i] - ys[i];
    if (v != 0) d.push_back(v);
  }
  TestResult r;
  r.test_name = "wilcoxon_signed_rank";
  r.effect_size.label = "rank_biserial";
  const std::size_t n = d.size();
  r.n_effective = static_cast<long long>(n);
  if (n < xs.size()) r.notes.push_back(std::to_string(xs.size() - n) + " zero differences dropped");
  if (n == 0) {
    r.degenerate = true;
    r.statistic = 0;
    r.p_value = 1;
    r.method_note = "exact";
    r.effect_size.value = 0.0;
    r.notes.push_back("all differences are zero");
    finalize(r);
    return r;
  }
  std::vector<double> abs_d(n);
  for (std::size_t i = 0; i < n; ++i) abs_d[i] = std::abs(d[i]);
  std::vector<std::size_t> ties;
  const auto ranks = average_ranks(abs_d, &ties);
  double w_plus = 0, w_minus = 0;
  for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? w_plus : w_minus) += ranks[i];
  const double w = std::min(w_plus, w_minus);
  r.statistic = w;
  r.effect_size.value = (w_plus - w_minus) / (w_plus + w_minus);

  const bool exact = method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && n <= 20);
  if (exact) {
    // Doubled ranks are integers; count sign assignments with 2*W+ <= 2*w.
    std::vector<long long> doubled(n);
    long long total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      doubled[i] = std::llround(2 * ranks[i]);
      total2 += doubled[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
    ways[0] = 1;
    for (long long rk : doubled)
      for (long long s = total2; s >= rk; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - rk)];
    const long long w2 = std::llround(2 * w);
    double at_most = 0;
    for (long long s = 0; s <= w2; ++s) at_most += ways[static_cast<std::size_t>(s)];
    r.p_value = std::min(1.0, 2 * at_most / std::ldexp(1.0, static_cast<int>(n)));
    r.method_note = "exact";
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4;
    double var = nn * (nn + 1) * (2 * nn + 1) / 24;
    for (std::size_t t : ties) {
      const double tt = static_cast<double>(t);
      var -= (tt * tt * tt - tt) / 48;
    }
    if (var <= 0) {
      r.p_value = 1;
    } else {
      const double z = std::max(0.0, std::abs(w - mean) - 0.5) / std::sqrt(var);
      r.p_value = std::min(1.0, 2 * (1 - normal_cdf(z)));
    }
    r.method_note = "approximate: normal with tie and continuity correction";
  }
  finalize(r);
  return r;
}

// ---------------------------------------------------------------------------
// Confidence intervals

struct MeanCI {
  double mean = 0;
  std::optional<double> lower;
  std::optional<double> upper;
  double sd = 0;
  std::size_t n = 0;
  double confidence = 0.95;
  bool interval_available = false;
};

/// mean +/- t_{n-1,(1+conf)/2} * sd / sqrt(n). With n = 1 only the point
/// estimate is returned and the interval is flagged unavailable.
inline MeanCI mean_ci(std::span<const double> scores, double confidence = 0.95) {
  if (scores.empty()) throw InvalidArgument("mean_ci needs at least one score");
  if (!(confidence > 0 && confidence < 1)) throw InvalidArgument("confidence must lie in (0,1)");
  MeanCI out;
  out.n = scores.size();
  out.confidence = confidence;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(out.n);
  if (out.n < 2) return out;
  double ss = 0;
  for (double v : scores) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(out.n - 1));
  const double t = student_t_quantile((1 + confidence) / 2, static_cast<double>(out.n - 1));
  const double half = t * out.sd / std::sqrt(static_cast<double>(out.n));
  out.lower = out.mean - half;
  out.upper = out.mean + half;
  out.interval_available = true;
  return out;
}

/// Percentile with linear interpolation between order statistics (q in [0,1]).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(values.size() - 1, lo + 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace evalkit::stats
