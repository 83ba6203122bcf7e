#pragma once

// Reference-based term-overlap metrics: ROUGE-N/L/S, BLEU, expected-term
// recall and TF-IDF cosine. All functions are pure.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evalkit/errors.hpp"
#include "evalkit/text.hpp"

namespace evalkit {

enum class RougeKind { n, l, s };
enum class Aggregation { max, mean };
enum class Smoothing { none, add_epsilon };

struct RougeVariant {
  RougeKind kind = RougeKind::n;
  int n = 1;         // ROUGE-N order
  int max_skip = 4;  // ROUGE-S: tokens allowed between the two words of a skip-bigram

  static RougeVariant rouge_n(int n) { return {RougeKind::n, n, 4}; }
  static RougeVariant rouge_l() { return {RougeKind::l, 1, 4}; }
  static RougeVariant rouge_s(int max_skip = 4) { return {RougeKind::s, 2, max_skip}; }
};

struct OverlapConfig {
  RougeVariant rouge = RougeVariant::rouge_n(1);
  double beta = 1.0;
  int bleu_max_n = 4;
  std::vector<double> bleu_weights;  // empty = uniform 1/bleu_max_n
  Smoothing smoothing = Smoothing::none;
  double epsilon = 1e-9;
  Aggregation aggregation = Aggregation::max;
  TokenMode token_mode = TokenMode::word;

  void validate() const {
    if (!(beta > 0) || !std::isfinite(beta)) throw ConfigError("beta must be a positive finite number");
    if (rouge.kind == RougeKind::n && rouge.n < 1) throw ConfigError("ROUGE-N order must be >= 1");
    if (rouge.kind == RougeKind::s && rouge.max_skip < 0) throw ConfigError("ROUGE-S max_skip must be >= 0");
    if (bleu_max_n < 1) throw ConfigError("bleu_max_n must be >= 1");
    if (!bleu_weights.empty()) {
      if (static_cast<int>(bleu_weights.size()) != bleu_max_n)
        throw ConfigError("bleu_weights length must equal bleu_max_n");
      double sum = 0;
      for (double w : bleu_weights) {
        if (!(w >= 0)) throw ConfigError("bleu_weights must be non-negative");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("bleu_weights must sum to 1");
    }
    if (smoothing == Smoothing::add_epsilon && !(epsilon > 0))
      throw ConfigError("smoothing epsilon must be > 0");
  }

  std::vector<double> weights() const {
    if (!bleu_weights.empty()) return bleu_weights;
    return std::vector<double>(static_cast<std::size_t>(bleu_max_n), 1.0 / bleu_max_n);
  }
};

struct PRF {
  double precision = 0;
  double recall = 0;
  double f = 0;
};

inline double f_beta(double precision, double recall, double beta) {
  if (precision <= 0 && recall <= 0) return 0.0;
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom <= 0) return 0.0;
  return (1 + b2) * precision * recall / denom;
}

using Tokens = std::vector<std::string>;
using NgramCounts = std::map<std::vector<std::string_view>, int>;

inline NgramCounts ngram_counts(const Tokens& toks, int n) {
  NgramCounts counts;
  if (n < 1 || toks.size() < static_cast<std::size_t>(n)) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::vector<std::string_view> key(toks.begin() + i, toks.begin() + i + n);
    ++counts[key];
  }
  return counts;
}

inline int total(const NgramCounts& c) {
  int t = 0;
  for (const auto& [_, v] : c) t += v;
  return t;
}

inline int clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
  int hits = 0;
  for (const auto& [g, cnt] : cand) {
    if (auto it = ref.find(g); it != ref.end()) hits += std::min(cnt, it->second);
  }
  return hits;
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Skip-bigrams (w_i, w_j), i < j, with at most max_skip tokens between them.
inline NgramCounts skip_bigram_counts(const Tokens& toks, int max_skip) {
  NgramCounts counts;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const std::size_t last = std::min(toks.size() - 1, i + static_cast<std::size_t>(max_skip) + 1);
    for (std::size_t j = i + 1; j <= last; ++j) ++counts[{toks[i], toks[j]}];
  }
  return counts;
}

/// ROUGE against a single tokenized reference.
///
/// When neither side has a unit of the requested kind (e.g. one-token texts
/// under ROUGE-2) the pair scores 1 if the token sequences are identical and
/// non-empty, else 0.
inline PRF rouge_tokens(const Tokens& cand, const Tokens& ref, const OverlapConfig& cfg) {
  if (cand.empty() && ref.empty()) throw InvalidArgument("ROUGE of two empty texts is undefined");
  if (cand.empty() || ref.empty()) return {};
  double hits = 0, cand_units = 0, ref_units = 0;
  switch (cfg.rouge.kind) {
    case RougeKind::n:
    case RougeKind::s: {
      const auto c = cfg.rouge.kind == RougeKind::n ? ngram_counts(cand, cfg.rouge.n)
                                                    : skip_bigram_counts(cand, cfg.rouge.max_skip);
      const auto r = cfg.rouge.kind == RougeKind::n ? ngram_counts(ref, cfg.rouge.n)
                                                    : skip_bigram_counts(ref, cfg.rouge.max_skip);
      hits = clipped_overlap(c, r);
      cand_units = total(c);
      ref_units = total(r);
      break;
    }
    case RougeKind::l:
      hits = static_cast<double>(lcs_length(cand, ref));
      cand_units = static_cast<double>(cand.size());
      ref_units = static_cast<double>(ref.size());
      break;
  }
  if (cand_units == 0 && ref_units == 0) {
    const double v = cand == ref ? 1.0 : 0.0;
    return {v, v, v};
  }
  PRF out;
  out.precision = cand_units > 0 ? hits / cand_units : 0.0;
  out.recall = ref_units > 0 ? hits / ref_units : 0.0;
  out.f = f_beta(out.precision, out.recall, cfg.beta);
  return out;
}

/// ROUGE of `candidate` against one or more references. With max
/// aggregation the reference with the best F_beta (first on ties) supplies
/// all three numbers; with mean they are averaged component-wise.
inline PRF rouge(std::string_view candidate, std::span<const std::string> references,
                 const OverlapConfig& cfg = {}) {
  cfg.validate();
  if (references.empty()) throw InvalidArgument("ROUGE needs at least one reference");
  const Tokens cand = tokenize(candidate, cfg.token_mode).tokens;
  std::vector<PRF> scores;
  bool any_nonempty = !cand.empty();
  for (const auto& r : references) {
    const Tokens ref = tokenize(r, cfg.token_mode).tokens;
    if (!ref.empty()) any_nonempty = true;
    if (cand.empty() && ref.empty()) {
      scores.push_back({});
      continue;
    }
    scores.push_back(rouge_tokens(cand, ref, cfg));
  }
  if (!any_nonempty) throw InvalidArgument("ROUGE of empty candidate against empty references");
  if (cfg.aggregation == Aggregation::max) {
    return *std::max_element(scores.begin(), scores.end(),
                             [](const PRF& a, const PRF& b) { return a.f < b.f; });
  }
  PRF mean;
  for (const auto& s : scores) {
    mean.precision += s.precision;
    mean.recall += s.recall;
    mean.f += s.f;
  }
  const double k = static_cast<double>(scores.size());
  return {mean.precision / k, mean.recall / k, mean.f / k};
}

inline PRF rouge(std::string_view candidate, std::string_view reference, const OverlapConfig& cfg = {}) {
  const std::string ref(reference);
  return rouge(candidate, std::span<const std::string>(&ref, 1), cfg);
}

/// BLEU brevity penalty for candidate length c and effective reference length r.
inline double brevity_penalty(double c, double r) {
  if (c <= 0) return 0.0;
  return c > r ? 1.0 : std::exp(1.0 - r / c);
}

/// Closest reference length to c; ties go to the shorter reference.
inline std::size_t effective_reference_length(std::size_t c, const std::vector<Tokens>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = r.size() > c ? r.size() - c : c - r.size();
    const auto bd = best > c ? best - c : c - best;
    if (d < bd || (d == bd && r.size() < best)) best = r.size();
  }
  return best;
}

/// Sentence BLEU with multi-reference clipping.
///
/// Orders for which the candidate has no n-grams at all (candidates shorter
/// than n) are left out and the remaining weights renormalized; every other
/// order with a zero clipped precision zeroes the score unless add-epsilon
/// smoothing is enabled.
inline double bleu(std::string_view candidate, std::span<const std::string> references,
                   const OverlapConfig& cfg = {}) {
  cfg.validate();
  if (references.empty()) throw InvalidArgument("BLEU needs at least one reference");
  const Tokens cand = tokenize(candidate, cfg.token_mode).tokens;
  if (cand.empty()) return 0.0;
  std::vector<Tokens> refs;
  for (const auto& r : references) refs.push_back(tokenize(r, cfg.token_mode).tokens);

  const auto weights = cfg.weights();
  double log_sum = 0, weight_sum = 0;
  for (int n = 1; n <= cfg.bleu_max_n; ++n) {
    const auto c = ngram_counts(cand, n);
    const int denom = total(c);
    if (denom == 0) continue;
    NgramCounts max_ref;
    for (const auto& r : refs)
      for (const auto& [g, cnt] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], cnt);
    double clipped = clipped_overlap(c, max_ref);
    const double w = weights[static_cast<std::size_t>(n - 1)];
    if (w == 0) continue;
    if (clipped == 0) {
      if (cfg.smoothing == Smoothing::none) return 0.0;
      clipped = cfg.epsilon;
    }
    log_sum += w * std::log(clipped / denom);
    weight_sum += w;
  }
  if (weight_sum == 0) return 0.0;
  const double precision_term = std::exp(log_sum / weight_sum);
  const double bp = brevity_penalty(static_cast<double>(cand.size()),
                                    static_cast<double>(effective_reference_length(cand.size(), refs)));
  return std::clamp(bp * precision_term, 0.0, 1.0);
}

inline double bleu(std::string_view candidate, std::string_view reference, const OverlapConfig& cfg = {}) {
  const std::string ref(reference);
  return bleu(candidate, std::span<const std::string>(&ref, 1), cfg);
}

inline bool contains_subsequence(const Tokens& haystack, const Tokens& needle) {
  if (needle.empty()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

/// Fraction of expected terms present in the candidate; multi-word terms
/// must appear as contiguous token runs.
inline double keyword_recall(std::string_view candidate, std::span<const std::string> expected_terms) {
  if (expected_terms.empty()) throw InvalidArgument("keyword_recall needs at least one expected term");
  const Tokens cand = words(candidate);
  std::size_t found = 0;
  for (const auto& term : expected_terms)
    if (contains_subsequence(cand, words(term))) ++found;
  return static_cast<double>(found) / static_cast<double>(expected_terms.size());
}

/// Document frequencies for TF-IDF weighting.
struct CorpusStats {
  std::size_t documents = 0;
  std::unordered_map<std::string, std::size_t> df;

  template <typename Range>
  static CorpusStats build(const Range& texts) {
    CorpusStats s;
    for (const auto& t : texts) s.add(t);
    return s;
  }

  void add(std::string_view text) {
    ++documents;
    auto toks = words(text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df[std::move(t)];
  }

  double idf(const std::string& term) const {
    const auto it = df.find(term);
    const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
    return std::log((1.0 + static_cast<double>(documents)) / (1.0 + d)) + 1.0;
  }
};

/// Cosine of raw-count TF-IDF vectors; idf = ln((1+N)/(1+df)) + 1.
inline double tfidf_cosine(std::string_view candidate, std::string_view reference, const CorpusStats& stats) {
  if (stats.documents == 0) throw InvalidArgument("TF-IDF corpus statistics are empty");
  std::map<std::string, double> a, b;
  for (auto& t : words(candidate)) a[t] += 1;
  for (auto& t : words(reference)) b[t] += 1;
  double dot = 0, na = 0, nb = 0;
  for (auto& [t, tf] : a) {
    tf *= stats.idf(t);
    na += tf * tf;
  }
  for (auto& [t, tf] : b) {
    tf *= stats.idf(t);
    nb += tf * tf;
  }
  for (const auto& [t, wa] : a)
    if (auto it = b.find(t); it != b.end()) dot += wa * it->second;
  if (na == 0 || nb == 0) return 0.0;
  if (a == b) return 1.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

}  // namespace evalkit
