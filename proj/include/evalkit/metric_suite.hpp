#pragma once

// Named, configurable per-item metrics shared by run_eval and the
// robustness engines.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evalkit/corpus.hpp"
#include "evalkit/errors.hpp"
#include "evalkit/model_metrics.hpp"
#include "evalkit/overlap_metrics.hpp"
#include "evalkit/providers.hpp"

namespace evalkit {

/// Declared scale of a metric; comparison tests are chosen from it.
enum class MetricScale { binary, likert5, continuous, unbounded };

inline const char* to_string(MetricScale s) {
  switch (s) {
    case MetricScale::binary: return "binary";
    case MetricScale::likert5: return "likert5";
    case MetricScale::continuous: return "continuous";
    case MetricScale::unbounded: return "unbounded";
  }
  return "?";
}

inline MetricScale parse_metric_scale(const std::string& s) {
  if (s == "binary") return MetricScale::binary;
  if (s == "likert5") return MetricScale::likert5;
  if (s == "continuous") return MetricScale::continuous;
  if (s == "unbounded") return MetricScale::unbounded;
  throw ConfigError("unknown metric scale '" + s + "'");
}

enum class MetricKind { rouge, bleu, keyword_recall, tfidf_cosine, embedding_similarity, nli_entailment, perplexity, autorater };

enum class NliPremise { reference, grounding };

struct MetricSpec {
  std::string name;
  MetricKind kind = MetricKind::rouge;
  OverlapConfig overlap;
  RubricSpec rubric;
  NliPremise premise = NliPremise::reference;

  MetricScale scale() const {
    if (kind == MetricKind::perplexity) return MetricScale::unbounded;
    if (kind == MetricKind::autorater) {
      switch (rubric.scale) {
        case RatingScale::binary: return MetricScale::binary;
        case RatingScale::likert5: return MetricScale::likert5;
        case RatingScale::continuous01: return MetricScale::continuous;
      }
    }
    return MetricScale::continuous;
  }

  bool higher_is_better() const { return kind != MetricKind::perplexity; }

  bool needs_references() const {
    switch (kind) {
      case MetricKind::rouge:
      case MetricKind::bleu:
      case MetricKind::tfidf_cosine:
      case MetricKind::embedding_similarity:
        return true;
      case MetricKind::nli_entailment: return premise == NliPremise::reference;
      default: return false;
    }
  }
};

/// Parses "rouge1", "rouge2", "rougeL", "rougeS", "bleu", "keyword_recall",
/// "tfidf_cosine", "embedding_similarity", "nli_entailment", "perplexity",
/// or an object {"name", "kind", ...options}.
inline MetricSpec parse_metric_spec(const nlohmann::json& j) {
  MetricSpec m;
  std::string kind;
  if (j.is_string()) {
    m.name = kind = j.get<std::string>();
  } else if (j.is_object()) {
    m.name = j.at("name").get<std::string>();
    kind = j.value("kind", m.name);
  } else {
    throw ConfigError("metric entries must be strings or objects");
  }
  if (kind.rfind("rouge", 0) == 0) {
    m.kind = MetricKind::rouge;
    const std::string v = kind.substr(5);
    if (v == "L" || v == "l") m.overlap.rouge = RougeVariant::rouge_l();
    else if (v == "S" || v == "s") m.overlap.rouge = RougeVariant::rouge_s();
    else if (!v.empty() && std::all_of(v.begin(), v.end(), ::isdigit)) m.overlap.rouge = RougeVariant::rouge_n(std::stoi(v));
    else throw ConfigError("unknown ROUGE variant '" + kind + "'");
  } else if (kind == "bleu") {
    m.kind = MetricKind::bleu;
  } else if (kind == "keyword_recall") {
    m.kind = MetricKind::keyword_recall;
  } else if (kind == "tfidf_cosine") {
    m.kind = MetricKind::tfidf_cosine;
  } else if (kind == "embedding_similarity") {
    m.kind = MetricKind::embedding_similarity;
  } else if (kind == "nli_entailment") {
    m.kind = MetricKind::nli_entailment;
  } else if (kind == "perplexity") {
    m.kind = MetricKind::perplexity;
  } else if (kind == "autorater") {
    m.kind = MetricKind::autorater;
  } else {
    throw ConfigError("unknown metric '" + kind + "'");
  }
  if (j.is_object()) {
    if (j.contains("beta")) m.overlap.beta = j["beta"].get<double>();
    if (j.contains("max_skip")) m.overlap.rouge.max_skip = j["max_skip"].get<int>();
    if (j.contains("aggregation")) {
      const auto a = j["aggregation"].get<std::string>();
      if (a != "max" && a != "mean") throw ConfigError("aggregation must be max or mean");
      m.overlap.aggregation = a == "max" ? Aggregation::max : Aggregation::mean;
    }
    if (j.contains("bleu_max_n")) m.overlap.bleu_max_n = j["bleu_max_n"].get<int>();
    if (j.contains("bleu_weights")) m.overlap.bleu_weights = j["bleu_weights"].get<std::vector<double>>();
    if (j.contains("smoothing")) {
      const auto s = j["smoothing"].get<std::string>();
      m.overlap.smoothing = s == "add_epsilon" ? Smoothing::add_epsilon : Smoothing::none;
      if (s != "none" && s != "add_epsilon") throw ConfigError("smoothing must be none or add_epsilon");
    }
    if (j.contains("epsilon")) m.overlap.epsilon = j["epsilon"].get<double>();
    if (j.contains("premise")) {
      const auto p = j["premise"].get<std::string>();
      if (p != "reference" && p != "grounding") throw ConfigError("premise must be reference or grounding");
      m.premise = p == "grounding" ? NliPremise::grounding : NliPremise::reference;
    }
    if (j.contains("rubric")) {
      const auto& r = j["rubric"];
      m.rubric.name = r.value("name", m.name);
      m.rubric.scale = parse_rating_scale(r.value("scale", std::string("binary")));
      m.rubric.criteria = r.value("criteria", std::string{});
      m.rubric.template_text = r.value("template", std::string(default_pointwise_template()));
      m.rubric.include_grounding = r.value("include_grounding", true);
    }
  }
  m.overlap.validate();
  return m;
}

struct MetricValue {
  std::optional<double> value;  // empty when the metric could not be computed
  std::string error;
};

/// Providers available to metrics; null members are simply unavailable.
struct ScoringContext {
  const Embedder* embedder = nullptr;
  const NliScorer* nli = nullptr;
  const LogProbScorer* logprob = nullptr;
  const Generator* autorater = nullptr;
  const CorpusStats* tfidf_stats = nullptr;
};

class MetricSuite {
 public:
  MetricSuite() = default;
  MetricSuite(std::vector<MetricSpec> specs, ScoringContext ctx) : specs_(std::move(specs)), ctx_(ctx) {
    std::set<std::string> names;
    for (const auto& s : specs_)
      if (!names.insert(s.name).second) throw ConfigError("metric '" + s.name + "' configured twice");
  }

  const std::vector<MetricSpec>& specs() const { return specs_; }
  const ScoringContext& context() const { return ctx_; }
  void set_context(ScoringContext ctx) { ctx_ = ctx; }

  /// Fails fast, naming items and providers, when a metric cannot be
  /// computed for this dataset.
  void check_prerequisites(const Dataset& dataset) const {
    for (const auto& m : specs_) {
      std::vector<std::string> missing;
      for (const auto& item : dataset.items) {
        if (m.needs_references() && item.references.empty()) missing.push_back(item.id);
        else if (m.kind == MetricKind::keyword_recall && item.expected_terms.empty()) missing.push_back(item.id);
        else if (m.kind == MetricKind::nli_entailment && m.premise == NliPremise::grounding && item.grounding.empty())
          missing.push_back(item.id);
      }
      if (!missing.empty()) {
        std::string ids;
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) ids += (i ? ", " : "") + missing[i];
        if (missing.size() > 20) ids += ", ...";
        throw ConfigError("metric '" + m.name + "' lacks required data (" +
                          (m.kind == MetricKind::keyword_recall ? "expected_terms" :
                           m.premise == NliPremise::grounding && m.kind == MetricKind::nli_entailment ? "grounding" : "references") +
                          ") for " + std::to_string(missing.size()) + " item(s): " + ids);
      }
      const char* need = nullptr;
      if (m.kind == MetricKind::embedding_similarity && !ctx_.embedder) need = "embedder";
      if (m.kind == MetricKind::nli_entailment && !ctx_.nli) need = "nli";
      if (m.kind == MetricKind::autorater && !ctx_.autorater) need = "autorater";
      if (m.kind == MetricKind::tfidf_cosine && !ctx_.tfidf_stats) need = "tfidf corpus statistics";
      if (need) throw ConfigError("metric '" + m.name + "' needs a configured " + std::string(need) + " provider");
    }
  }

  /// Scores one response. Never throws for per-item problems; failures
  /// come back as valueless MetricValues carrying the error.
  std::map<std::string, MetricValue> score(const EvalItem& item, const GenerationRecord& response) const {
    std::map<std::string, MetricValue> out;
    for (const auto& m : specs_) {
      MetricValue v;
      try {
        v.value = compute(m, item, response);
      } catch (const std::exception& e) {
        v.error = e.what();
      }
      out.emplace(m.name, std::move(v));
    }
    return out;
  }

  std::optional<double> compute(const MetricSpec& m, const EvalItem& item, const GenerationRecord& response) const {
    const std::string& text = response.text;
    switch (m.kind) {
      case MetricKind::rouge:
        return rouge(text, item.references, m.overlap).f;
      case MetricKind::bleu:
        return bleu(text, item.references, m.overlap);
      case MetricKind::keyword_recall:
        return keyword_recall(text, item.expected_terms);
      case MetricKind::tfidf_cosine: {
        double best = 0;
        for (const auto& r : item.references) best = std::max(best, tfidf_cosine(text, r, *ctx_.tfidf_stats));
        return best;
      }
      case MetricKind::embedding_similarity: {
        double best = -1;
        for (const auto& r : item.references) best = std::max(best, embedding_similarity(text, r, *ctx_.embedder));
        return best;
      }
      case MetricKind::nli_entailment: {
        double best = 0;
        if (m.premise == NliPremise::grounding) {
          std::string premise;
          for (const auto& g : item.grounding) premise += (premise.empty() ? "" : "\n") + g.text;
          return entailment(premise, text, *ctx_.nli).entailment();
        }
        for (const auto& r : item.references) best = std::max(best, entailment(r, text, *ctx_.nli).entailment());
        return best;
      }
      case MetricKind::perplexity: {
        if (response.token_logprobs) return perplexity(*response.token_logprobs);
        if (!ctx_.logprob) throw ProviderError(ProviderErrorKind::unavailable, "no log-probabilities for response");
        return perplexity(ctx_.logprob->token_logprobs(text));
      }
      case MetricKind::autorater: {
        const auto verdict = autorate_pointwise(item, text, m.rubric, *ctx_.autorater);
        if (!verdict.scored()) throw ProviderError(ProviderErrorKind::invalid_output, verdict.error.value_or("unscored") + "; raw: " + verdict.raw);
        return verdict.value;
      }
    }
    return std::nullopt;
  }

 private:
  std::vector<MetricSpec> specs_;
  ScoringContext ctx_;
};

}  // namespace evalkit
