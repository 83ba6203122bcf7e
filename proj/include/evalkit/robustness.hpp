#pragma once

// Robustness methodology: prompt noise and sensitivity, self-consistency,
// variance baselines, grounding ablation and hallucination probing.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <unicode/uchar.h>

#include "evalkit/corpus.hpp"
#include "evalkit/errors.hpp"
#include "evalkit/metric_suite.hpp"
#include "evalkit/model_metrics.hpp"
#include "evalkit/parallel.hpp"
#include "evalkit/providers.hpp"
#include "evalkit/stats.hpp"
#include "evalkit/text.hpp"

namespace evalkit {

// ---------------------------------------------------------------------------
// Perturbation

enum class PerturbationKind { case_swap, whitespace_insert, char_swap, llm_rewrite };

inline const char* to_string(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::case_swap: return "case_swap";
    case PerturbationKind::whitespace_insert: return "whitespace_insert";
    case PerturbationKind::char_swap: return "char_swap";
    case PerturbationKind::llm_rewrite: return "llm_rewrite";
  }
  return "?";
}

inline PerturbationKind parse_perturbation_kind(const std::string& s) {
  if (s == "case_swap") return PerturbationKind::case_swap;
  if (s == "whitespace_insert") return PerturbationKind::whitespace_insert;
  if (s == "char_swap") return PerturbationKind::char_swap;
  if (s == "llm_rewrite") return PerturbationKind::llm_rewrite;
  throw ConfigError("unknown perturbation kind '" + s + "'");
}

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::case_swap;
  double intensity = 0.1;  // fraction of eligible positions
  uint64_t seed = 0;

  void validate() const {
    if (!(intensity >= 0 && intensity <= 1)) throw ConfigError("perturbation intensity must lie in [0,1]");
  }
};

inline const char* rewrite_instruction() {
  return "Rewrite the following text so that it keeps its meaning but uses different wording. "
         "Reply with the rewritten text only.\n\n";
}

namespace detail {

/// First k entries of a seeded partial Fisher-Yates shuffle of [0, n).
inline std::vector<std::size_t> sample_positions(std::size_t n, std::size_t k, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::size_t sample_count(double intensity, std::size_t eligible) {
  return static_cast<std::size_t>(std::llround(intensity * static_cast<double>(eligible)));
}

}  // namespace detail

/// Applies one noise kind. Provider-free kinds operate on code points and
/// are a pure function of (prompt, spec).
inline std::string perturb(std::string_view prompt, const PerturbationSpec& spec, const Generator* rewriter = nullptr) {
  spec.validate();
  if (spec.kind == PerturbationKind::llm_rewrite) {
    if (!rewriter) throw ConfigError("llm_rewrite perturbation requires a generator provider");
    if (spec.intensity == 0) return std::string(prompt);
    GenerationParams p;
    p.seed = spec.seed;
    return trim(rewriter->generate(std::string(rewrite_instruction()) + std::string(prompt), p).text);
  }
  auto cps = code_points(prompt);
  SplitMix64 rng(hash_combine(spec.seed, static_cast<uint64_t>(spec.kind) + 1));
  switch (spec.kind) {
    case PerturbationKind::case_swap: {
      std::vector<std::size_t> eligible;
      for (std::size_t i = 0; i < cps.size(); ++i)
        if (u_toupper(cps[i]) != cps[i] || u_tolower(cps[i]) != cps[i]) eligible.push_back(i);
      for (std::size_t j : detail::sample_positions(eligible.size(), detail::sample_count(spec.intensity, eligible.size()), rng)) {
        UChar32& c = cps[eligible[j]];
        c = u_isupper(c) ? u_tolower(c) : u_toupper(c);
      }
      return to_utf8(cps);
    }
    case PerturbationKind::whitespace_insert: {
      // Boundaries between adjacent code points, 1..n-1.
      const std::size_t boundaries = cps.size() > 1 ? cps.size() - 1 : 0;
      const auto chosen = detail::sample_positions(boundaries, detail::sample_count(spec.intensity, boundaries), rng);
      std::vector<UChar32> out;
      out.reserve(cps.size() + chosen.size());
      std::size_t next = 0;
      for (std::size_t i = 0; i < cps.size(); ++i) {
        out.push_back(cps[i]);
        if (next < chosen.size() && chosen[next] == i) {
          out.push_back(' ');
          ++next;
        }
      }
      return to_utf8(out);
    }
    case PerturbationKind::char_swap: {
      const std::size_t pairs = cps.size() > 1 ? cps.size() - 1 : 0;
      for (std::size_t i : detail::sample_positions(pairs, detail::sample_count(spec.intensity, pairs), rng))
        std::swap(cps[i], cps[i + 1]);
      return to_utf8(cps);
    }
    case PerturbationKind::llm_rewrite:
      break;
  }
  return std::string(prompt);
}

// ---------------------------------------------------------------------------
// Shared item pass

/// One generation plus metric scores. A failed generation is scored as an
/// empty response and its error kept.
struct ItemOutcome {
  std::string item_id;
  std::string prompt;
  std::string response;
  std::optional<std::string> failure;
  int retries = 0;
  std::map<std::string, MetricValue> metrics;
};

inline ItemOutcome generate_and_score(const EvalItem& item, const std::string& prompt, const Generator& generator,
                                      const GenerationParams& params, const MetricSuite& suite) {
  ItemOutcome out;
  out.item_id = item.id;
  out.prompt = prompt;
  GenerationRecord rec;
  try {
    rec = generator.generate(prompt, params);
  } catch (const std::exception& e) {
    out.failure = e.what();
    rec = GenerationRecord{};
  }
  out.response = rec.text;
  out.retries = rec.retries;
  out.metrics = suite.score(item, rec);
  return out;
}

inline GenerationParams item_params(GenerationParams base, uint64_t seed, std::string_view item_id, uint64_t salt = 0) {
  base.seed = hash_combine(hash_combine(seed, hash64(item_id)), salt);
  return base;
}

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& values) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::optional<double> diff(const std::optional<double>& after, const std::optional<double>& before) {
  if (!after || !before) return std::nullopt;
  return *after - *before;
}

// ---------------------------------------------------------------------------
// Sensitivity analysis

struct SensitivityParams {
  GenerationParams generation;
  uint64_t seed = 0;
  std::size_t top_n = 10;
  std::size_t workers = 1;
  const Generator* rewriter = nullptr;  // for llm_rewrite; defaults to the system under test
};

struct AffectedItem {
  std::string item_id;
  std::string kind;
  std::string metric;
  double before = 0;
  double after = 0;
  double delta = 0;
};

using MetricMeans = std::map<std::string, std::optional<double>>;

struct SensitivityReport {
  MetricMeans baseline;
  std::map<std::string, MetricMeans> perturbed;  // keyed by perturbation kind
  std::map<std::string, MetricMeans> deltas;
  std::map<std::string, std::map<std::string, MetricMeans>> tag_deltas;  // tag -> kind -> metric
  std::vector<AffectedItem> most_affected;
  std::map<std::string, double> coverage_by_kind;  // "baseline" included
  double coverage = 1.0;
  std::size_t generations = 0;
  std::size_t failures = 0;
  std::vector<PerturbationSpec> specs;
  uint64_t seed = 0;
};

/// Baseline pass, then one regenerated pass per perturbation spec.
inline SensitivityReport sensitivity_analysis(const Dataset& dataset, const Generator& generator, const MetricSuite& suite,
                                              const std::vector<PerturbationSpec>& specs, const SensitivityParams& params = {}) {
  suite.check_prerequisites(dataset);
  params.generation.validate();
  for (const auto& s : specs) s.validate();
  const auto& items = dataset.items;
  const std::size_t n = items.size();

  auto run_pass = [&](const std::optional<PerturbationSpec>& spec, uint64_t salt) {
    std::vector<ItemOutcome> out(n);
    parallel_for(n, params.workers, [&](std::size_t i) {
      std::string prompt = items[i].prompt;
      if (spec) {
        PerturbationSpec s = *spec;
        s.seed = hash_combine(spec->seed, hash64(items[i].id));
        prompt = perturb(prompt, s, params.rewriter ? params.rewriter : &generator);
      }
      out[i] = generate_and_score(items[i], prompt, generator, item_params(params.generation, params.seed, items[i].id, salt), suite);
    });
    return out;
  };

  auto means = [&](const std::vector<ItemOutcome>& pass, const std::function<bool(std::size_t)>& keep) {
    MetricMeans m;
    for (const auto& spec : suite.specs()) {
      std::vector<std::optional<double>> vals;
      for (std::size_t i = 0; i < n; ++i)
        if (keep(i)) vals.push_back(pass[i].metrics.at(spec.name).value);
      m[spec.name] = mean_of(vals);
    }
    return m;
  };
  auto all = [](std::size_t) { return true; };
  auto coverage = [&](const std::vector<ItemOutcome>& pass) {
    std::size_t ok = 0;
    for (const auto& o : pass) ok += !o.failure;
    return n == 0 ? 1.0 : static_cast<double>(ok) / static_cast<double>(n);
  };

  SensitivityReport report;
  report.specs = specs;
  report.seed = params.seed;
  const auto baseline = run_pass(std::nullopt, 0);
  report.baseline = means(baseline, all);
  report.coverage_by_kind["baseline"] = coverage(baseline);

  std::set<std::string> tags;
  for (const auto& it : items) tags.insert(it.tags.begin(), it.tags.end());

  auto count = [&](const std::vector<ItemOutcome>& pass) {
    report.generations += pass.size();
    for (const auto& o : pass) report.failures += o.failure.has_value();
  };
  count(baseline);

  for (std::size_t s = 0; s < specs.size(); ++s) {
    const std::string kind = to_string(specs[s].kind);
    const auto pass = run_pass(specs[s], s + 1);
    count(pass);
    report.coverage_by_kind[kind] = coverage(pass);
    report.perturbed[kind] = means(pass, all);
    for (const auto& [metric, after] : report.perturbed[kind]) report.deltas[kind][metric] = diff(after, report.baseline[metric]);
    for (const auto& tag : tags) {
      auto has_tag = [&](std::size_t i) { return items[i].tags.count(tag) > 0; };
      const auto before = means(baseline, has_tag);
      const auto after = means(pass, has_tag);
      for (const auto& [metric, a] : after) report.tag_deltas[tag][kind][metric] = diff(a, before.at(metric));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& spec : suite.specs()) {
        const auto& b = baseline[i].metrics.at(spec.name).value;
        const auto& a = pass[i].metrics.at(spec.name).value;
        if (a && b && *a != *b) report.most_affected.push_back({items[i].id, kind, spec.name, *b, *a, *a - *b});
      }
  }
  std::stable_sort(report.most_affected.begin(), report.most_affected.end(), [](const AffectedItem& x, const AffectedItem& y) {
    const double ax = std::fabs(x.delta), ay = std::fabs(y.delta);
    if (ax != ay) return ax > ay;
    return std::tie(x.item_id, x.kind, x.metric) < std::tie(y.item_id, y.kind, y.metric);
  });
  if (report.most_affected.size() > params.top_n) report.most_affected.resize(params.top_n);
  report.coverage = report.generations == 0 ? 1.0
                                            : static_cast<double>(report.generations - report.failures) / static_cast<double>(report.generations);
  return report;
}

// ---------------------------------------------------------------------------
// Self-consistency

enum class Equivalence { normalized_exact, embed_cluster };

struct SelfConsistencyParams {
  int n = 5;
  GenerationParams generation{0.7, 1.0, 512, std::nullopt};
  uint64_t seed = 0;
  Equivalence equivalence = Equivalence::normalized_exact;
  double tau = 0.95;
  const Embedder* embedder = nullptr;
};

struct SelfConsistencyResult {
  std::string modal_response;
  double agreement_rate = 0;
  std::vector<std::string> samples;
  std::vector<std::size_t> group_of;  // group index per sample
  std::size_t failures = 0;
  std::vector<std::string> warnings;
};

inline std::string equivalence_key(std::string_view text) {
  return join(tokenize(text, TokenMode::word).tokens, " ");
}

/// Samples n responses and returns the most frequent one. Ties between
/// groups go to the group seen first.
inline SelfConsistencyResult self_consistency(std::string_view prompt, const Generator& generator, const SelfConsistencyParams& params) {
  if (params.n < 1) throw ConfigError("self-consistency needs n >= 1");
  params.generation.validate();
  if (params.equivalence == Equivalence::embed_cluster && !params.embedder)
    throw ConfigError("embedding-cluster equivalence needs an embedder");
  SelfConsistencyResult r;
  if (params.generation.temperature == 0)
    r.warnings.push_back("temperature is 0; samples are likely identical and agreement uninformative");
  for (int i = 0; i < params.n; ++i) {
    GenerationParams p = params.generation;
    p.seed = hash_combine(params.seed, static_cast<uint64_t>(i));
    try {
      r.samples.push_back(generator.generate(prompt, p).text);
    } catch (const std::exception& e) {
      ++r.failures;
      r.warnings.push_back(std::string("sample ") + std::to_string(i) + " failed: " + e.what());
    }
  }
  if (r.samples.empty()) throw ProviderError(ProviderErrorKind::unavailable, "all self-consistency samples failed");

  std::vector<std::vector<std::size_t>> groups;
  if (params.equivalence == Equivalence::normalized_exact) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      auto [it, fresh] = index.try_emplace(equivalence_key(r.samples[i]), groups.size());
      if (fresh) groups.emplace_back();
      groups[it->second].push_back(i);
      r.group_of.push_back(it->second);
    }
  } else {
    std::vector<std::vector<double>> vecs;
    for (const auto& s : r.samples) vecs.push_back(params.embedder->embed(s));
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      std::size_t g = 0;
      for (; g < groups.size(); ++g)
        if (cosine(vecs[groups[g].front()], vecs[i]) >= params.tau) break;
      if (g == groups.size()) groups.emplace_back();
      groups[g].push_back(i);
      r.group_of.push_back(g);
    }
    std::size_t best = 0;
    for (std::size_t g = 1; g < groups.size(); ++g)
      if (groups[g].size() > groups[best].size()) best = g;
    std::size_t medoid = groups[best].front();
    double best_sum = -INFINITY;
    for (std::size_t a : groups[best]) {
      double sum = 0;
      for (std::size_t b : groups[best]) sum += cosine(vecs[a], vecs[b]);
      if (sum > best_sum) {
        best_sum = sum;
        medoid = a;
      }
    }
    r.modal_response = r.samples[medoid];
    r.agreement_rate = static_cast<double>(groups[best].size()) / static_cast<double>(r.samples.size());
    return r;
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < groups.size(); ++g)
    if (groups[g].size() > groups[best].size()) best = g;
  r.modal_response = r.samples[groups[best].front()];
  r.agreement_rate = static_cast<double>(groups[best].size()) / static_cast<double>(r.samples.size());
  return r;
}

// ---------------------------------------------------------------------------
// Variance baseline

struct VarianceParams {
  int n_runs = 10;
  GenerationParams generation;
  uint64_t seed = 0;
  double confidence = 0.95;
  std::size_t workers = 1;
};

struct VarianceBaseline {
  int n_runs = 0;
  std::map<std::string, std::vector<double>> run_means;  // one per run with data
  std::map<std::string, stats::MeanCI> summary;
  std::vector<std::size_t> failures_per_run;
};

/// Repeats the full pipeline n_runs times on fixed inputs and summarizes
/// the per-run metric means.
inline VarianceBaseline variance_baseline(const Dataset& dataset, const Generator& generator, const MetricSuite& suite,
                                          const VarianceParams& params = {}) {
  if (params.n_runs < 2) throw ConfigError("variance baseline needs n_runs >= 2");
  suite.check_prerequisites(dataset);
  const auto& items = dataset.items;
  VarianceBaseline out;
  out.n_runs = params.n_runs;
  for (int run = 0; run < params.n_runs; ++run) {
    std::vector<ItemOutcome> pass(items.size());
    parallel_for(items.size(), params.workers, [&](std::size_t i) {
      pass[i] = generate_and_score(items[i], items[i].prompt, generator,
                                   item_params(params.generation, params.seed, items[i].id, static_cast<uint64_t>(run)), suite);
    });
    std::size_t failed = 0;
    for (const auto& o : pass) failed += o.failure.has_value();
    out.failures_per_run.push_back(failed);
    for (const auto& spec : suite.specs()) {
      std::vector<std::optional<double>> vals;
      for (const auto& o : pass) vals.push_back(o.metrics.at(spec.name).value);
      if (auto m = mean_of(vals)) out.run_means[spec.name].push_back(*m);
    }
  }
  for (const auto& [name, means] : out.run_means) out.summary[name] = stats::mean_ci(means, params.confidence);
  return out;
}

// ---------------------------------------------------------------------------
// Grounding ablation

inline const char* default_with_grounding_template() { return "{grounding}\nQuestion: {prompt}"; }
inline const char* default_without_grounding_template() { return "{prompt}"; }

enum class PairedTest { wilcoxon, ttest };

struct AblationParams {
  std::string with_grounding = default_with_grounding_template();
  std::string without_grounding = default_without_grounding_template();
  PairedTest test = PairedTest::wilcoxon;
  GenerationParams generation;
  uint64_t seed = 0;
  std::size_t workers = 1;
};

struct AblationItem {
  std::string item_id;
  double with_grounding = 0;
  double without_grounding = 0;
  double delta = 0;  // with - without
};

struct AblationMetric {
  std::vector<AblationItem> items;
  std::optional<stats::TestResult> test;
};

struct AblationResult {
  std::size_t items_evaluated = 0;
  std::vector<std::string> skipped;  // items without grounding
  std::map<std::string, AblationMetric> metrics;
  std::vector<std::string> notices;
};

inline std::string render_prompt(const std::string& tmpl, const EvalItem& item) {
  return render_template(tmpl, {{"prompt", item.prompt}, {"grounding", grounding_block(item)}});
}

/// Runs every grounded item twice, with and without its grounding block,
/// and tests the paired metric scores.
inline AblationResult grounding_ablation(const Dataset& dataset, const Generator& generator, const MetricSuite& suite,
                                         const AblationParams& params = {}) {
  AblationResult out;
  Dataset grounded;
  grounded.name = dataset.name;
  grounded.version = dataset.version;
  for (const auto& it : dataset.items) {
    if (it.grounding.empty()) out.skipped.push_back(it.id);
    else grounded.items.push_back(it);
  }
  if (!out.skipped.empty())
    out.notices.push_back(std::to_string(out.skipped.size()) + " item(s) without grounding skipped");
  out.items_evaluated = grounded.items.size();
  if (grounded.items.empty()) {
    out.notices.push_back("0 items evaluated");
    return out;
  }
  suite.check_prerequisites(grounded);
  const auto& items = grounded.items;
  std::vector<ItemOutcome> with(items.size()), without(items.size());
  parallel_for(items.size(), params.workers, [&](std::size_t i) {
    const auto p = item_params(params.generation, params.seed, items[i].id);
    with[i] = generate_and_score(items[i], render_prompt(params.with_grounding, items[i]), generator, p, suite);
    without[i] = generate_and_score(items[i], render_prompt(params.without_grounding, items[i]), generator, p, suite);
  });
  for (const auto& spec : suite.specs()) {
    AblationMetric m;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& a = with[i].metrics.at(spec.name).value;
      const auto& b = without[i].metrics.at(spec.name).value;
      if (!a || !b) continue;
      m.items.push_back({items[i].id, *a, *b, *a - *b});
      xs.push_back(*a);
      ys.push_back(*b);
    }
    if (!xs.empty())
      m.test = params.test == PairedTest::wilcoxon ? stats::wilcoxon_signed_rank(xs, ys) : stats::paired_t(xs, ys);
    out.metrics.emplace(spec.name, std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hallucination probes

struct Probe {
  std::string prompt;
  std::string entity;
  std::string entity_kind;  // "cve", "product", "person", "answerable"
  bool expect_idk = true;
};

struct ProbeSet {
  std::vector<Probe> probes;
  uint64_t seed = 0;
};

struct ProbeTemplates {
  std::map<std::string, std::string> families = {
      {"cve", "Tell me about {entity}"},
      {"product", "What are the main features of the {entity}?"},
      {"person", "Who is {entity}?"},
  };
  int cve_year = 2037;
};

struct ProbeParams {
  std::size_t count = 10;
  uint64_t seed = 0;
  std::vector<std::string> known_entities;
  std::vector<std::string> answerable;  // prompts the system should answer
  int max_retries = 100;
};

namespace detail {

inline std::string pseudo_word(SplitMix64& rng, int syllables) {
  static const char* onsets[] = {"b", "br", "d", "f", "g", "k", "kr", "l", "m", "n", "p", "qu", "r", "s", "st", "t", "v", "z"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ae", "io"};
  std::string w;
  for (int i = 0; i < syllables; ++i) {
    w += onsets[rng.below(std::size(onsets))];
    w += vowels[rng.below(std::size(vowels))];
  }
  w += "nrxls"[rng.below(5)];
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

inline std::string fictitious_entity(const std::string& family, SplitMix64& rng, int cve_year) {
  if (family == "cve") {
    std::string digits = std::to_string(1000000 + rng.below(9000000));
    return "CVE-" + std::to_string(cve_year) + "-" + digits;
  }
  if (family == "product") {
    return pseudo_word(rng, 2) + " " + static_cast<char>('A' + rng.below(26)) + "-" + std::to_string(100 + rng.below(9900));
  }
  if (family == "person") return pseudo_word(rng, 2) + " " + pseudo_word(rng, 3);
  return pseudo_word(rng, 3);
}

}  // namespace detail

/// Fictitious-entity probes, round-robin over the template families, plus
/// one expect_idk=false probe per answerable prompt.
inline ProbeSet generate_probes(const ProbeTemplates& templates, const ProbeParams& params) {
  if (params.count < 1) throw ConfigError("probe count must be >= 1");
  if (templates.families.empty()) throw ConfigError("no probe template families configured");
  ProbeSet set;
  set.seed = params.seed;
  SplitMix64 rng(hash_combine(params.seed, 0x70726f6265ULL));
  std::set<std::string> taken;
  for (const auto& k : params.known_entities) taken.insert(nfc_lower(k));
  std::vector<std::pair<std::string, std::string>> fams(templates.families.begin(), templates.families.end());
  for (std::size_t i = 0; i < params.count; ++i) {
    const auto& [family, tmpl] = fams[i % fams.size()];
    std::string entity;
    int attempt = 0;
    for (;; ++attempt) {
      if (attempt > params.max_retries)
        throw Error("could not generate a fresh '" + family + "' entity after " + std::to_string(params.max_retries) + " retries");
      entity = detail::fictitious_entity(family, rng, templates.cve_year);
      if (taken.insert(nfc_lower(entity)).second) break;
    }
    set.probes.push_back({render_template(tmpl, {{"entity", entity}}), entity, family, true});
  }
  for (const auto& q : params.answerable) set.probes.push_back({q, "", "answerable", false});
  return set;
}

inline const std::vector<std::string>& default_refusal_patterns() {
  static const std::vector<std::string> p = {"i don't know", "i do not know", "does not exist", "no information",
                                             "cannot find", "unable to answer", "i'm not sure"};
  return p;
}

/// Optional learned "I don't know" classifier.
class IdkClassifier {
 public:
  virtual ~IdkClassifier() = default;
  virtual bool is_idk(std::string_view response) const = 0;
};

inline std::string normalize_refusal_text(std::string_view text) {
  std::string s = normalize_for_matching(text);
  for (const std::string curly : {"’", "‘", "ʼ"}) {
    for (std::size_t pos = s.find(curly); pos != std::string::npos; pos = s.find(curly, pos)) s.replace(pos, curly.size(), "'");
  }
  return s;
}

/// Heuristic refusal detection unless a classifier is supplied. A failing
/// classifier falls back to the patterns and appends a warning.
inline bool detect_idk(std::string_view response, const std::vector<std::string>& patterns = default_refusal_patterns(),
                       const IdkClassifier* classifier = nullptr, std::vector<std::string>* warnings = nullptr) {
  if (classifier) {
    try {
      return classifier->is_idk(response);
    } catch (const std::exception& e) {
      if (warnings) warnings->push_back(std::string("IDK classifier failed, using patterns: ") + e.what());
    }
  }
  const std::string s = normalize_refusal_text(response);
  for (const auto& p : patterns) {
    const std::string np = normalize_refusal_text(p);
    if (!np.empty() && s.find(np) != std::string::npos) return true;
  }
  return false;
}

struct ProbeRecord {
  Probe probe;
  std::string response;
  std::optional<bool> idk;  // empty when the call failed
  std::optional<std::string> failure;
};

struct ProbeOutcome {
  std::optional<double> hallucination_rate;            // over answered fictitious probes
  std::optional<double> undesirable_nonresponse_rate;  // over answered answerable probes
  std::size_t fictitious = 0, answerable = 0;
  std::size_t failures = 0;
  std::vector<ProbeRecord> records;
  std::vector<std::string> warnings;
};

struct ProbeRunParams {
  GenerationParams generation;
  std::vector<std::string> refusal_patterns = default_refusal_patterns();
  const IdkClassifier* classifier = nullptr;
  uint64_t seed = 0;
  std::size_t workers = 1;
};

inline ProbeOutcome hallucination_and_nonresponse(const ProbeSet& probes, const Generator& generator, const ProbeRunParams& params = {}) {
  if (probes.probes.empty()) throw ConfigError("probe set is empty");
  ProbeOutcome out;
  out.records.resize(probes.probes.size());
  std::vector<std::vector<std::string>> warns(probes.probes.size());
  parallel_for(probes.probes.size(), params.workers, [&](std::size_t i) {
    auto& rec = out.records[i];
    rec.probe = probes.probes[i];
    try {
      rec.response = generator.generate(rec.probe.prompt, item_params(params.generation, params.seed, rec.probe.prompt)).text;
      rec.idk = detect_idk(rec.response, params.refusal_patterns, params.classifier, &warns[i]);
    } catch (const std::exception& e) {
      rec.failure = e.what();
    }
  });
  std::size_t fict_answered = 0, fict_ok = 0, ans_idk = 0, ans_ok = 0;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& rec = out.records[i];
    for (auto& w : warns[i]) out.warnings.push_back(std::move(w));
    (rec.probe.expect_idk ? out.fictitious : out.answerable) += 1;
    if (!rec.idk) {
      ++out.failures;
      continue;
    }
    if (rec.probe.expect_idk) {
      ++fict_ok;
      fict_answered += !*rec.idk;
    } else {
      ++ans_ok;
      ans_idk += *rec.idk;
    }
  }
  if (fict_ok) out.hallucination_rate = static_cast<double>(fict_answered) / static_cast<double>(fict_ok);
  if (ans_ok) out.undesirable_nonresponse_rate = static_cast<double>(ans_idk) / static_cast<double>(ans_ok);
  return out;
}

}  // namespace evalkit
