#pragma once

// Model-backed metrics on top of the provider interfaces: embedding
// similarity, NLI entailment, perplexity, autorater scoring (point-wise and
// side-by-side) and retrieval ranking metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "evalkit/corpus.hpp"
#include "evalkit/errors.hpp"
#include "evalkit/overlap_metrics.hpp"
#include "evalkit/providers.hpp"

namespace evalkit {

// ---------------------------------------------------------------------------
// Embeddings

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("embedding dimensions differ");
  if (a.empty()) throw InvalidArgument("empty embedding");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw InvalidArgument("non-finite embedding entry");
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw InvalidArgument("cosine of a zero vector is undefined");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

inline double embedding_similarity(std::string_view a, std::string_view b, const Embedder& embedder) {
  const auto va = embedder.embed(a);
  const auto vb = embedder.embed(b);
  return cosine(va, vb);
}

// ---------------------------------------------------------------------------
// NLI

enum class NliLabel { entailment, neutral, contradiction };

inline const char* to_string(NliLabel l) {
  switch (l) {
    case NliLabel::entailment: return "entailment";
    case NliLabel::neutral: return "neutral";
    case NliLabel::contradiction: return "contradiction";
  }
  return "?";
}

struct NliVerdict {
  std::array<double, 3> scores{};  // entailment, neutral, contradiction
  NliLabel label = NliLabel::neutral;
  std::vector<std::string> warnings;

  double entailment() const { return scores[0]; }
};

/// Validates provider scores onto the simplex: sums off by at most 1e-3 are
/// renormalized with a warning, anything else is rejected. Ties in the
/// argmax resolve entailment > neutral > contradiction.
inline NliVerdict make_nli_verdict(std::array<double, 3> raw) {
  NliVerdict v;
  double sum = 0;
  for (double s : raw) {
    if (!std::isfinite(s) || s < 0) throw ProviderError(ProviderErrorKind::invalid_output, "NLI scores must be finite and >= 0");
    sum += s;
  }
  if (std::abs(sum - 1.0) > 1e-3)
    throw ProviderError(ProviderErrorKind::invalid_output, "NLI scores sum to " + std::to_string(sum));
  if (std::abs(sum - 1.0) > 1e-6) v.warnings.push_back("NLI scores renormalized from sum " + std::to_string(sum));
  for (auto& s : raw) s /= sum;
  v.scores = raw;
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i)
    if (raw[i] > raw[best]) best = i;
  v.label = static_cast<NliLabel>(best);
  return v;
}

/// By convention the golden reference (or grounding text) is the premise
/// and the response under evaluation the hypothesis.
inline NliVerdict entailment(std::string_view premise, std::string_view hypothesis, const NliScorer& scorer) {
  return make_nli_verdict(scorer.score(premise, hypothesis));
}

// ---------------------------------------------------------------------------
// Perplexity

/// exp(-(1/N) * sum(logp)) over natural-log token probabilities.
inline double perplexity(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw InvalidArgument("perplexity needs at least one token");
  double sum = 0;
  for (double lp : token_logprobs) {
    if (!(lp <= 0)) throw InvalidArgument("token log-probabilities must be <= 0");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(token_logprobs.size()));
}

// ---------------------------------------------------------------------------
// Autoraters

enum class RatingScale { binary, likert5, continuous01 };

inline const char* to_string(RatingScale s) {
  switch (s) {
    case RatingScale::binary: return "binary";
    case RatingScale::likert5: return "likert5";
    case RatingScale::continuous01: return "continuous01";
  }
  return "?";
}

inline RatingScale parse_rating_scale(const std::string& s) {
  if (s == "binary") return RatingScale::binary;
  if (s == "likert5") return RatingScale::likert5;
  if (s == "continuous01") return RatingScale::continuous01;
  throw ConfigError("unknown rating scale '" + s + "'");
}

inline const char* default_pointwise_template() {
  return "You are grading a response.\nCriteria: {criteria}\n{grounding}Prompt: {prompt}\n"
         "Response: {response}\nAnswer with your verdict only.";
}

inline const char* default_sxs_template() {
  return "Compare two responses.\nCriteria: {criteria}\n{grounding}Prompt: {prompt}\n"
         "Response A: {response_a}\nResponse B: {response_b}\n"
         "Answer A or B for the better response.";
}

struct RubricSpec {
  std::string name = "rubric";
  RatingScale scale = RatingScale::binary;
  std::string criteria;
  std::string template_text = default_pointwise_template();
  bool include_grounding = true;
};

/// Replaces {key} placeholders; unknown placeholders are left untouched.
inline std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string key(tmpl.substr(i + 1, close - i - 1));
        if (auto it = vars.find(key); it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

inline std::string grounding_block(const EvalItem& item) {
  if (item.grounding.empty()) return {};
  std::string out = "Grounding:\n";
  for (const auto& g : item.grounding) out += "[" + g.doc_id + "] " + g.text + "\n";
  return out;
}

struct AutoraterVerdict {
  RatingScale scale = RatingScale::binary;
  std::optional<double> value;  // empty when unscored
  std::optional<std::string> rationale;
  std::string raw;
  std::optional<std::string> error;  // "parse_failure" or "scale_violation: ..."

  bool scored() const { return value.has_value(); }
};

/// Parses the first conforming token for the declared scale: yes/no for
/// binary, an integer for likert5 (must be 1..5), a real for continuous01
/// (must be in [0,1]).
inline AutoraterVerdict parse_verdict(std::string_view raw, RatingScale scale) {
  AutoraterVerdict v;
  v.scale = scale;
  v.raw = std::string(raw);
  std::smatch m;
  switch (scale) {
    case RatingScale::binary: {
      static const std::regex re(R"(\b(yes|no)\b)", std::regex::icase);
      if (std::regex_search(v.raw, m, re)) {
        const std::string w = nfc_lower(m.str(1));
        v.value = w == "yes" ? 1.0 : 0.0;
      }
      break;
    }
    case RatingScale::likert5: {
      static const std::regex re(R"((^|[^0-9.])([0-9]+)(?![0-9]*\.[0-9]))");
      if (std::regex_search(v.raw, m, re)) {
        const long n = std::stol(m.str(2));
        if (n < 1 || n > 5) {
          v.error = "scale_violation: " + m.str(2) + " outside 1..5";
          return v;
        }
        v.value = static_cast<double>(n);
      }
      break;
    }
    case RatingScale::continuous01: {
      static const std::regex re(R"([-+]?[0-9]*\.?[0-9]+)");
      if (std::regex_search(v.raw, m, re)) {
        const double x = std::stod(m.str(0));
        if (!(x >= 0 && x <= 1)) {
          v.error = "scale_violation: " + m.str(0) + " outside [0,1]";
          return v;
        }
        v.value = x;
      }
      break;
    }
  }
  if (!v.value) {
    v.error = "parse_failure";
  } else if (m.suffix().length() > 0) {
    const std::string rest = trim(m.suffix().str());
    if (!rest.empty()) v.rationale = rest;
  }
  return v;
}

inline GenerationParams rater_params() {
  GenerationParams p;
  p.temperature = 0.0;
  return p;
}

/// Point-wise autorating. Provider errors propagate; parse failures and
/// scale violations come back as an unscored verdict with the raw text.
inline AutoraterVerdict autorate_pointwise(const EvalItem& item, std::string_view response,
                                           const RubricSpec& rubric, const Generator& rater) {
  const std::map<std::string, std::string> vars = {
      {"prompt", item.prompt},
      {"response", std::string(response)},
      {"criteria", rubric.criteria},
      {"grounding", rubric.include_grounding ? grounding_block(item) : std::string{}},
  };
  const auto rec = rater.generate(render_template(rubric.template_text, vars), rater_params());
  return parse_verdict(rec.text, rubric.scale);
}

enum class Preference { a, b, tie };

inline const char* to_string(Preference p) {
  switch (p) {
    case Preference::a: return "A";
    case Preference::b: return "B";
    case Preference::tie: return "tie";
  }
  return "?";
}

/// First standalone uppercase "A"/"B"; failing that a standalone 1 (prefers
/// the first response) or 0.
inline std::optional<Preference> parse_preference(const std::string& raw) {
  static const std::regex letter(R"(\b([AB])\b)");
  static const std::regex digit(R"(\b([01])\b)");
  std::smatch m;
  if (std::regex_search(raw, m, letter)) return m.str(1) == "A" ? Preference::a : Preference::b;
  if (std::regex_search(raw, m, digit)) return m.str(1) == "1" ? Preference::a : Preference::b;
  return std::nullopt;
}

struct SxsVerdict {
  std::optional<Preference> preference;  // empty when unscored
  std::vector<std::string> raw;          // one per query, in query order
  std::optional<std::string> error;
};

struct SxsParams {
  bool order_swap = true;
};

/// Side-by-side preference. With order_swap the rater also sees the pair
/// in reverse; a winner must win in both orders, otherwise the result is a tie.
inline SxsVerdict autorate_sxs(const EvalItem& item, std::string_view response_a, std::string_view response_b,
                               const RubricSpec& rubric, const Generator& rater, SxsParams params = {}) {
  SxsVerdict out;
  auto ask = [&](std::string_view first, std::string_view second) -> std::optional<Preference> {
    const std::map<std::string, std::string> vars = {
        {"prompt", item.prompt},
        {"response_a", std::string(first)},
        {"response_b", std::string(second)},
        {"criteria", rubric.criteria},
        {"grounding", rubric.include_grounding ? grounding_block(item) : std::string{}},
    };
    const auto rec = rater.generate(render_template(rubric.template_text, vars), rater_params());
    out.raw.push_back(rec.text);
    return parse_preference(rec.text);
  };
  try {
    const auto first = ask(response_a, response_b);
    if (!first) {
      out.error = "parse_failure";
      return out;
    }
    if (!params.order_swap) {
      out.preference = *first;
      return out;
    }
    const auto second = ask(response_b, response_a);
    if (!second) {
      out.error = "parse_failure";
      return out;
    }
    // In the swapped query position A holds response_b.
    const Preference second_mapped = *second == Preference::a ? Preference::b : Preference::a;
    out.preference = *first == second_mapped ? *first : Preference::tie;
  } catch (const ProviderError& e) {
    out.error = e.what();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval ranking metrics

struct RankedRetrieval {
  std::vector<std::string> ranked_doc_ids;
  std::map<std::string, int> relevance;  // graded; > 0 means relevant
};

struct RetrievalAtK {
  int k = 0;
  double precision = 0;
  double recall = 0;
  double f_beta = 0;
  double ndcg = 0;
};

struct RetrievalMetrics {
  std::vector<RetrievalAtK> at_k;
  double mrr = 0;
  double mean_precision = 0;
  double mean_recall = 0;
  double mean_f_beta = 0;
  double mean_ndcg = 0;
};

inline int relevance_of(const RankedRetrieval& run, const std::string& id) {
  const auto it = run.relevance.find(id);
  return it == run.relevance.end() ? 0 : std::max(it->second, 0);
}

/// P/R/F_beta@k, NDCG@k (linear gain, log2 discount, IDCG from all judged
/// documents) and reciprocal rank of the first relevant document.
inline RetrievalMetrics retrieval_metrics(const RankedRetrieval& run, std::span<const int> depths, double beta = 1.0) {
  if (depths.empty()) throw InvalidArgument("retrieval_metrics needs at least one depth");
  std::set<std::string> seen;
  for (const auto& id : run.ranked_doc_ids)
    if (!seen.insert(id).second) throw InvalidArgument("duplicate ranked doc id '" + id + "'");
  for (int k : depths)
    if (k <= 0) throw InvalidArgument("retrieval depth must be positive");

  std::size_t total_relevant = 0;
  std::vector<int> ideal;
  for (const auto& [id, rel] : run.relevance) {
    if (rel > 0) {
      ++total_relevant;
      ideal.push_back(rel);
    }
  }
  std::sort(ideal.rbegin(), ideal.rend());

  RetrievalMetrics out;
  for (std::size_t i = 0; i < run.ranked_doc_ids.size(); ++i) {
    if (relevance_of(run, run.ranked_doc_ids[i]) > 0) {
      out.mrr = 1.0 / static_cast<double>(i + 1);
      break;
    }
  }
  for (int k : depths) {
    RetrievalAtK m;
    m.k = k;
    const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(k), run.ranked_doc_ids.size());
    std::size_t hits = 0;
    double dcg = 0;
    for (std::size_t i = 0; i < limit; ++i) {
      const int rel = relevance_of(run, run.ranked_doc_ids[i]);
      if (rel > 0) ++hits;
      dcg += rel / std::log2(static_cast<double>(i) + 2.0);
    }
    double idcg = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(static_cast<std::size_t>(k), ideal.size()); ++i)
      idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
    m.precision = static_cast<double>(hits) / k;
    m.recall = total_relevant ? static_cast<double>(hits) / static_cast<double>(total_relevant) : 0.0;
    m.f_beta = f_beta(m.precision, m.recall, beta);
    m.ndcg = idcg > 0 ? std::min(1.0, dcg / idcg) : 0.0;
    out.at_k.push_back(m);
  }
  const double nk = static_cast<double>(out.at_k.size());
  for (const auto& m : out.at_k) {
    out.mean_precision += m.precision / nk;
    out.mean_recall += m.recall / nk;
    out.mean_f_beta += m.f_beta / nk;
    out.mean_ndcg += m.ndcg / nk;
  }
  return out;
}

/// Mean of per-query reciprocal ranks.
inline double mean_reciprocal_rank(std::span<const RankedRetrieval> runs) {
  if (runs.empty()) throw InvalidArgument("MRR over zero queries");
  double sum = 0;
  const int one = 1;
  for (const auto& r : runs) sum += retrieval_metrics(r, std::span<const int>(&one, 1)).mrr;
  return sum / static_cast<double>(runs.size());
}

}  // namespace evalkit
