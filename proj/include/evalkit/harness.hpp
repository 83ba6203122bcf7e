#pragma once

// Run orchestration: config parsing, provider construction, the per-item
// generate-and-score pool, aggregates and the EvalReport document.

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "evalkit/corpus.hpp"
#include "evalkit/errors.hpp"
#include "evalkit/http_provider.hpp"
#include "evalkit/metric_suite.hpp"
#include "evalkit/parallel.hpp"
#include "evalkit/providers.hpp"
#include "evalkit/robustness.hpp"
#include "evalkit/stats.hpp"

namespace evalkit {

namespace fs = std::filesystem;

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::ordered_json read_json_file(const fs::path& path) {
  try {
    return nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Providers

enum class ProviderRole { generator, autorater, embedder, nli, logprob };

inline const char* to_string(ProviderRole r) {
  switch (r) {
    case ProviderRole::generator: return "generator";
    case ProviderRole::autorater: return "autorater";
    case ProviderRole::embedder: return "embedder";
    case ProviderRole::nli: return "nli";
    case ProviderRole::logprob: return "logprob";
  }
  return "?";
}

inline ProviderRole parse_provider_role(const std::string& s) {
  for (auto r : {ProviderRole::generator, ProviderRole::autorater, ProviderRole::embedder, ProviderRole::nli, ProviderRole::logprob})
    if (s == to_string(r)) return r;
  throw ConfigError("unknown provider role '" + s + "'");
}

struct ProviderSpec {
  std::string kind;  // "mock" or "http"
  std::optional<fs::path> table;  // mock behavior table
  uint64_t seed = 0;
  HttpSpec http;
};

inline ProviderSpec parse_provider_spec(const nlohmann::json& j, const fs::path& base_dir) {
  ProviderSpec s;
  s.kind = j.value("kind", std::string{});
  if (s.kind == "mock") {
    if (j.contains("table")) s.table = base_dir / j["table"].get<std::string>();
    s.seed = j.value("seed", uint64_t{0});
  } else if (s.kind == "http") {
    auto& h = s.http;
    h.endpoint = j.value("endpoint", std::string{});
    if (j.contains("request_template")) {
      const auto& t = j["request_template"];
      h.request_template = t.is_string() ? t.get<std::string>() : t.dump();
    }
    h.response_path = j.value("response_path", std::string{});
    if (j.contains("logprobs_path")) h.logprobs_path = j["logprobs_path"].get<std::string>();
    if (j.contains("auth_env")) h.auth_env = j["auth_env"].get<std::string>();
    if (j.contains("api_key") || j.contains("token"))
      throw ConfigError("secrets must not appear in the config; name an environment variable in auth_env");
    h.auth_header = j.value("auth_header", h.auth_header);
    h.auth_prefix = j.value("auth_prefix", h.auth_prefix);
    if (j.contains("headers")) h.headers = j["headers"].get<std::map<std::string, std::string>>();
    h.timeout_s = j.value("timeout_s", h.timeout_s);
    h.max_retries = j.value("max_retries", h.max_retries);
    h.backoff_base_s = j.value("backoff_base_s", h.backoff_base_s);
    h.validate();
  } else {
    throw ConfigError("provider kind must be mock or http");
  }
  return s;
}

/// Caps throughput at a tokens-per-minute budget shared by every worker.
/// Tokens are estimated as whitespace-separated words of prompt and response.
class TokenBucket {
 public:
  explicit TokenBucket(double tokens_per_minute) : rate_(tokens_per_minute / 60.0), capacity_(tokens_per_minute), level_(tokens_per_minute) {
    if (!(tokens_per_minute > 0)) throw ConfigError("rate_limit_tpm must be positive");
    last_ = std::chrono::steady_clock::now();
  }

  void acquire(double tokens) {
    tokens = std::min(tokens, capacity_);
    std::unique_lock lock(mu_);
    for (;;) {
      refill();
      if (level_ >= tokens) {
        level_ -= tokens;
        return;
      }
      const double wait = (tokens - level_) / rate_;
      lock.unlock();
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      lock.lock();
    }
  }

  void charge(double tokens) {
    std::lock_guard lock(mu_);
    refill();
    level_ -= tokens;
  }

 private:
  void refill() {
    const auto now = std::chrono::steady_clock::now();
    level_ = std::min(capacity_, level_ + std::chrono::duration<double>(now - last_).count() * rate_);
    last_ = now;
  }

  double rate_, capacity_, level_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mu_;
};

class RateLimitedGenerator : public Generator {
 public:
  RateLimitedGenerator(const Generator& inner, std::shared_ptr<TokenBucket> bucket) : inner_(inner), bucket_(std::move(bucket)) {}

  GenerationRecord generate(std::string_view prompt, const GenerationParams& params) const override {
    bucket_->acquire(static_cast<double>(split_spaces(prompt).size()));
    auto rec = inner_.generate(prompt, params);
    bucket_->charge(static_cast<double>(split_spaces(rec.text).size()));
    return rec;
  }

 private:
  const Generator& inner_;
  std::shared_ptr<TokenBucket> bucket_;
};

struct Providers {
  std::unique_ptr<Generator> generator;
  std::unique_ptr<Generator> autorater;
  std::unique_ptr<Embedder> embedder;
  std::unique_ptr<NliScorer> nli;
  std::unique_ptr<LogProbScorer> logprob;
  std::unique_ptr<Generator> limited;  // rate-limited view of generator
  std::shared_ptr<TokenBucket> bucket;

  const Generator* system() const { return limited ? limited.get() : generator.get(); }

  ScoringContext context(const CorpusStats* tfidf) const {
    return {embedder.get(), nli.get(), logprob.get(), autorater.get(), tfidf};
  }
};

inline void build_provider(Providers& p, ProviderRole role, const ProviderSpec& spec) {
  if (spec.kind == "http") {
    switch (role) {
      case ProviderRole::generator: p.generator = std::make_unique<HttpGenerator>(spec.http); break;
      case ProviderRole::autorater: p.autorater = std::make_unique<HttpGenerator>(spec.http); break;
      case ProviderRole::embedder: p.embedder = std::make_unique<HttpEmbedder>(spec.http); break;
      case ProviderRole::nli: p.nli = std::make_unique<HttpNliScorer>(spec.http); break;
      case ProviderRole::logprob: p.logprob = std::make_unique<HttpLogProbScorer>(spec.http); break;
    }
    return;
  }
  const nlohmann::ordered_json table = spec.table ? read_json_file(*spec.table) : nlohmann::ordered_json::object();
  switch (role) {
    case ProviderRole::generator:
    case ProviderRole::autorater: {
      if (!spec.table) throw ConfigError(std::string("mock ") + to_string(role) + " needs a behavior table");
      auto g = std::make_unique<MockGenerator>(BehaviorTable::from_json(table), spec.seed);
      (role == ProviderRole::generator ? p.generator : p.autorater) = std::move(g);
      break;
    }
    case ProviderRole::embedder: p.embedder = std::make_unique<MockEmbedder>(MockEmbedder::from_json(table, spec.seed)); break;
    case ProviderRole::nli: p.nli = std::make_unique<MockNliScorer>(MockNliScorer::from_json(table)); break;
    case ProviderRole::logprob: p.logprob = std::make_unique<MockLogProbScorer>(MockLogProbScorer::from_json(table, spec.seed)); break;
  }
}

// ---------------------------------------------------------------------------
// Run configuration

struct SensitivityConfig {
  std::vector<PerturbationSpec> perturbations;
  std::size_t top_n = 10;
};

struct ProbeConfig {
  ProbeTemplates templates;
  ProbeParams params;
};

struct RunConfig {
  fs::path config_path;
  fs::path base_dir;
  fs::path dataset_path;
  std::map<ProviderRole, ProviderSpec> providers;
  std::vector<MetricSpec> metrics;
  GenerationParams generation;
  uint64_t seed = 0;
  std::size_t workers = 1;
  std::optional<fs::path> output_path;
  std::vector<std::string> refusal_patterns = default_refusal_patterns();
  std::optional<double> rate_limit_tpm;
  double confidence = 0.95;

  std::optional<SelfConsistencyParams> self_consistency;
  std::optional<SensitivityConfig> sensitivity;
  std::optional<AblationParams> ablation;
  std::optional<int> variance_runs;
  std::optional<ProbeConfig> probes;

  nlohmann::json raw;  // as parsed, for hashing
  std::string config_hash;
};

inline GenerationParams parse_generation(const nlohmann::json& j, GenerationParams g = {}) {
  g.temperature = j.value("temperature", g.temperature);
  g.top_p = j.value("top_p", g.top_p);
  g.max_tokens = j.value("max_tokens", g.max_tokens);
  g.validate();
  return g;
}

/// Digest of the canonical config (output section dropped) plus the
/// contents of every file it references.
inline std::string compute_config_hash(const RunConfig& c) {
  nlohmann::json canon = c.raw;
  canon.erase("output");
  nlohmann::json files = nlohmann::json::object();
  files["dataset"] = sha256_hex(read_file(c.dataset_path));
  for (const auto& [role, spec] : c.providers)
    if (spec.table) files[std::string("provider.") + to_string(role)] = sha256_hex(read_file(*spec.table));
  canon["_files"] = files;
  return sha256_hex(canon.dump());
}

inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base_dir) {
  RunConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  try {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    static const std::set<std::string> known = {"dataset", "providers", "metrics", "generation", "methodology", "output",
                                                "seed", "refusal_patterns", "rate_limit_tpm", "confidence"};
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError("unknown config section '" + k + "'");
    if (!j.contains("dataset")) throw ConfigError("config needs a dataset path");
    c.dataset_path = base_dir / j["dataset"].get<std::string>();
    if (j.contains("providers"))
      for (const auto& [role, spec] : j["providers"].items()) c.providers[parse_provider_role(role)] = parse_provider_spec(spec, base_dir);
    if (!c.providers.count(ProviderRole::generator)) throw ConfigError("config needs a generator provider");
    if (!j.contains("metrics") || !j["metrics"].is_array() || j["metrics"].empty()) throw ConfigError("config needs a non-empty metrics list");
    for (const auto& m : j["metrics"]) c.metrics.push_back(parse_metric_spec(m));
    if (j.contains("generation")) c.generation = parse_generation(j["generation"]);
    c.seed = j.value("seed", uint64_t{0});
    c.confidence = j.value("confidence", 0.95);
    if (!(c.confidence > 0 && c.confidence < 1)) throw ConfigError("confidence must lie in (0,1)");
    if (j.contains("refusal_patterns")) c.refusal_patterns = j["refusal_patterns"].get<std::vector<std::string>>();
    if (j.contains("rate_limit_tpm")) c.rate_limit_tpm = j["rate_limit_tpm"].get<double>();
    if (j.contains("output")) {
      const auto& o = j["output"];
      if (o.contains("path")) c.output_path = base_dir / o["path"].get<std::string>();
      c.workers = o.value("workers", std::size_t{1});
      if (c.workers < 1) throw ConfigError("output.workers must be >= 1");
    }
    if (j.contains("methodology")) {
      const auto& m = j["methodology"];
      if (m.contains("self_consistency")) {
        const auto& s = m["self_consistency"];
        SelfConsistencyParams p;
        p.n = s.value("n", 5);
        p.generation = parse_generation(s, c.generation);
        if (!s.contains("temperature")) p.generation.temperature = 0.7;
        const auto eq = s.value("equivalence", std::string("normalized_exact"));
        if (eq == "embed_cluster") p.equivalence = Equivalence::embed_cluster;
        else if (eq != "normalized_exact") throw ConfigError("equivalence must be normalized_exact or embed_cluster");
        p.tau = s.value("tau", 0.95);
        if (p.n < 1) throw ConfigError("self_consistency.n must be >= 1");
        c.self_consistency = p;
      }
      if (m.contains("sensitivity")) {
        SensitivityConfig s;
        for (const auto& p : m["sensitivity"].at("perturbations")) {
          PerturbationSpec ps;
          ps.kind = parse_perturbation_kind(p.at("kind").get<std::string>());
          ps.intensity = p.value("intensity", 0.1);
          ps.seed = p.value("seed", c.seed);
          ps.validate();
          s.perturbations.push_back(ps);
        }
        s.top_n = m["sensitivity"].value("top_n", std::size_t{10});
        c.sensitivity = s;
      }
      if (m.contains("ablation")) {
        const auto& a = m["ablation"];
        AblationParams p;
        p.with_grounding = a.value("with_grounding", p.with_grounding);
        p.without_grounding = a.value("without_grounding", p.without_grounding);
        const auto t = a.value("test", std::string("wilcoxon"));
        if (t == "ttest") p.test = PairedTest::ttest;
        else if (t != "wilcoxon") throw ConfigError("ablation test must be wilcoxon or ttest");
        c.ablation = p;
      }
      if (m.contains("variance")) {
        c.variance_runs = m["variance"].value("n_runs", 10);
        if (*c.variance_runs < 2) throw ConfigError("variance.n_runs must be >= 2");
      }
      if (m.contains("probes")) {
        const auto& p = m["probes"];
        ProbeConfig pc;
        pc.params.count = p.value("count", std::size_t{10});
        pc.params.seed = p.value("seed", c.seed);
        if (p.contains("known_entities")) pc.params.known_entities = p["known_entities"].get<std::vector<std::string>>();
        if (p.contains("answerable")) pc.params.answerable = p["answerable"].get<std::vector<std::string>>();
        if (p.contains("templates")) pc.templates.families = p["templates"].get<std::map<std::string, std::string>>();
        pc.templates.cve_year = p.value("cve_year", pc.templates.cve_year);
        if (pc.params.count < 1) throw ConfigError("probes.count must be >= 1");
        c.probes = pc;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  c.config_hash = compute_config_hash(c);
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  auto c = parse_run_config(j, path.parent_path());
  c.config_path = path;
  return c;
}

// ---------------------------------------------------------------------------
// Report

struct MetricInfo {
  std::string name;
  MetricScale scale = MetricScale::continuous;
  bool higher_is_better = true;
  bool operator==(const MetricInfo&) const = default;
};

struct ItemRecord {
  std::string id;
  std::vector<std::string> tags;
  std::string response;
  int retries = 0;
  std::optional<std::string> failure;
  std::map<std::string, std::optional<double>> scores;
  std::map<std::string, std::string> errors;
  std::optional<double> agreement_rate;  // self-consistency mode
  bool operator==(const ItemRecord&) const = default;
};

struct Aggregate {
  std::optional<double> mean;
  std::optional<double> ci_lower;
  std::optional<double> ci_upper;
  double sd = 0;
  std::size_t n = 0;
  double coverage = 0;
  bool operator==(const Aggregate&) const = default;
};

struct EvalReport {
  std::string run_id;
  std::string dataset_name;
  long long dataset_version = 0;
  std::string config_hash;
  uint64_t seed = 0;
  double confidence = 0.95;
  std::vector<MetricInfo> metrics;
  std::vector<ItemRecord> items;  // sorted by id
  std::map<std::string, Aggregate> aggregates;
  nlohmann::ordered_json methodology = nlohmann::ordered_json::object();
  std::vector<std::string> warnings;
  nlohmann::ordered_json timing = nlohmann::ordered_json::object();

  const MetricInfo* metric(std::string_view name) const {
    for (const auto& m : metrics)
      if (m.name == name) return &m;
    return nullptr;
  }
};

inline constexpr int kReportVersion = 1;

inline Aggregate aggregate_scores(const std::vector<ItemRecord>& items, const std::string& metric, double confidence) {
  Aggregate a;
  std::vector<double> vals;
  for (const auto& it : items)
    if (auto s = it.scores.find(metric); s != it.scores.end() && s->second) vals.push_back(*s->second);
  a.n = vals.size();
  a.coverage = items.empty() ? 0.0 : static_cast<double>(vals.size()) / static_cast<double>(items.size());
  if (vals.empty()) return a;
  const auto ci = stats::mean_ci(vals, confidence);
  a.mean = ci.mean;
  a.ci_lower = ci.lower;
  a.ci_upper = ci.upper;
  a.sd = ci.sd;
  return a;
}

using ojson = nlohmann::ordered_json;

inline ojson opt_json(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? ojson(*v) : ojson(nullptr);
}

inline std::optional<double> opt_double(const ojson& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline ojson finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double double_from(const ojson& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  return NAN;
}

inline std::string alpha_key(double a) {
  std::ostringstream ss;
  ss << a;
  return ss.str();
}

inline ojson to_json(const stats::TestResult& r) {
  ojson j;
  j["test"] = r.test_name;
  j["statistic"] = finite_or_string(r.statistic);
  j["p_value"] = r.p_value;
  j["n_effective"] = r.n_effective;
  j["effect_size"] = {{"label", r.effect_size.label}, {"value", opt_json(r.effect_size.value)}};
  ojson sig = ojson::object();
  for (const auto& [a, s] : r.significant_at) sig[alpha_key(a)] = s;
  j["significant_at"] = sig;
  j["method"] = r.method_note;
  j["degenerate"] = r.degenerate;
  j["notes"] = r.notes;
  return j;
}

inline stats::TestResult test_result_from_json(const ojson& j) {
  stats::TestResult r;
  r.test_name = j.at("test").get<std::string>();
  r.statistic = double_from(j.at("statistic"));
  r.p_value = j.at("p_value").get<double>();
  r.n_effective = j.at("n_effective").get<long long>();
  r.effect_size.label = j.at("effect_size").at("label").get<std::string>();
  r.effect_size.value = opt_double(j.at("effect_size").at("value"));
  for (const auto& [k, v] : j.at("significant_at").items()) r.significant_at[std::stod(k)] = v.get<bool>();
  r.method_note = j.at("method").get<std::string>();
  r.degenerate = j.at("degenerate").get<bool>();
  r.notes = j.at("notes").get<std::vector<std::string>>();
  return r;
}

inline ojson to_json(const EvalReport& r) {
  ojson j;
  j["report_version"] = kReportVersion;
  j["run_id"] = r.run_id;
  j["dataset"] = {{"name", r.dataset_name}, {"version", r.dataset_version}};
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["confidence"] = r.confidence;
  ojson metrics = ojson::array();
  for (const auto& m : r.metrics)
    metrics.push_back({{"name", m.name}, {"scale", to_string(m.scale)}, {"higher_is_better", m.higher_is_better}});
  j["metrics"] = metrics;
  ojson aggs = ojson::object();
  for (const auto& m : r.metrics) {
    const auto& a = r.aggregates.at(m.name);
    aggs[m.name] = {{"mean", opt_json(a.mean)}, {"ci_lower", opt_json(a.ci_lower)}, {"ci_upper", opt_json(a.ci_upper)},
                    {"sd", a.sd},               {"n", a.n},                        {"coverage", a.coverage}};
  }
  j["aggregates"] = aggs;
  ojson items = ojson::array();
  for (const auto& it : r.items) {
    ojson i;
    i["id"] = it.id;
    i["tags"] = it.tags;
    i["response"] = it.response;
    i["retries"] = it.retries;
    i["failure"] = it.failure ? ojson(*it.failure) : ojson(nullptr);
    ojson scores = ojson::object();
    for (const auto& [k, v] : it.scores) scores[k] = opt_json(v);
    i["scores"] = scores;
    i["errors"] = it.errors;
    if (it.agreement_rate) i["agreement_rate"] = *it.agreement_rate;
    items.push_back(i);
  }
  j["items"] = items;
  j["methodology"] = r.methodology;
  j["warnings"] = r.warnings;
  j["timing"] = r.timing;
  return j;
}

inline EvalReport report_from_json(const ojson& j) {
  try {
    if (j.at("report_version").get<int>() != kReportVersion)
      throw ConfigError("unsupported report_version " + j.at("report_version").dump());
    EvalReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.dataset_name = j.at("dataset").at("name").get<std::string>();
    r.dataset_version = j.at("dataset").at("version").get<long long>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.confidence = j.value("confidence", 0.95);
    for (const auto& m : j.at("metrics"))
      r.metrics.push_back({m.at("name").get<std::string>(), parse_metric_scale(m.at("scale").get<std::string>()),
                           m.at("higher_is_better").get<bool>()});
    for (const auto& [name, a] : j.at("aggregates").items()) {
      Aggregate g;
      g.mean = opt_double(a.at("mean"));
      g.ci_lower = opt_double(a.at("ci_lower"));
      g.ci_upper = opt_double(a.at("ci_upper"));
      g.sd = a.at("sd").get<double>();
      g.n = a.at("n").get<std::size_t>();
      g.coverage = a.at("coverage").get<double>();
      r.aggregates[name] = g;
    }
    for (const auto& i : j.at("items")) {
      ItemRecord it;
      it.id = i.at("id").get<std::string>();
      it.tags = i.at("tags").get<std::vector<std::string>>();
      it.response = i.at("response").get<std::string>();
      it.retries = i.value("retries", 0);
      if (!i.at("failure").is_null()) it.failure = i["failure"].get<std::string>();
      for (const auto& [k, v] : i.at("scores").items()) it.scores[k] = opt_double(v);
      it.errors = i.at("errors").get<std::map<std::string, std::string>>();
      if (i.contains("agreement_rate")) it.agreement_rate = i["agreement_rate"].get<double>();
      r.items.push_back(std::move(it));
    }
    r.methodology = j.value("methodology", ojson::object());
    r.warnings = j.value("warnings", std::vector<std::string>{});
    r.timing = j.value("timing", ojson::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
}

inline EvalReport load_report(const fs::path& path) {
  auto j = ojson::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return report_from_json(j);
}

// Methodology sections

inline ojson to_json(const SensitivityReport& s) {
  auto means = [](const MetricMeans& m) {
    ojson o = ojson::object();
    for (const auto& [k, v] : m) o[k] = opt_json(v);
    return o;
  };
  ojson j;
  j["seed"] = s.seed;
  ojson specs = ojson::array();
  for (const auto& p : s.specs) specs.push_back({{"kind", to_string(p.kind)}, {"intensity", p.intensity}, {"seed", p.seed}});
  j["perturbations"] = specs;
  j["baseline"] = means(s.baseline);
  ojson per = ojson::object(), del = ojson::object();
  for (const auto& [k, m] : s.perturbed) per[k] = means(m);
  for (const auto& [k, m] : s.deltas) del[k] = means(m);
  j["perturbed"] = per;
  j["deltas"] = del;
  ojson tags = ojson::object();
  for (const auto& [tag, kinds] : s.tag_deltas) {
    ojson t = ojson::object();
    for (const auto& [k, m] : kinds) t[k] = means(m);
    tags[tag] = t;
  }
  j["tag_deltas"] = tags;
  ojson top = ojson::array();
  for (const auto& a : s.most_affected)
    top.push_back({{"item_id", a.item_id}, {"kind", a.kind}, {"metric", a.metric}, {"before", a.before}, {"after", a.after}, {"delta", a.delta}});
  j["most_affected"] = top;
  j["coverage"] = s.coverage;
  j["coverage_by_kind"] = s.coverage_by_kind;
  j["generations"] = s.generations;
  j["failures"] = s.failures;
  return j;
}

inline ojson to_json(const AblationResult& a) {
  ojson j;
  j["items_evaluated"] = a.items_evaluated;
  j["skipped"] = a.skipped;
  j["notices"] = a.notices;
  ojson metrics = ojson::object();
  for (const auto& [name, m] : a.metrics) {
    ojson items = ojson::array();
    for (const auto& it : m.items)
      items.push_back({{"item_id", it.item_id}, {"with_grounding", it.with_grounding}, {"without_grounding", it.without_grounding}, {"delta", it.delta}});
    metrics[name] = {{"items", items}, {"test", m.test ? to_json(*m.test) : ojson(nullptr)}};
  }
  j["metrics"] = metrics;
  return j;
}

inline ojson to_json(const VarianceBaseline& v) {
  ojson j;
  j["n_runs"] = v.n_runs;
  j["failures_per_run"] = v.failures_per_run;
  ojson m = ojson::object();
  for (const auto& [name, ci] : v.summary)
    m[name] = {{"run_means", v.run_means.at(name)}, {"mean", ci.mean},        {"sd", ci.sd},
               {"ci_lower", opt_json(ci.lower)},     {"ci_upper", opt_json(ci.upper)}, {"confidence", ci.confidence}};
  j["metrics"] = m;
  return j;
}

inline ojson to_json(const ProbeOutcome& p, uint64_t seed) {
  ojson j;
  j["seed"] = seed;
  j["hallucination_rate"] = opt_json(p.hallucination_rate);
  j["undesirable_nonresponse_rate"] = opt_json(p.undesirable_nonresponse_rate);
  j["fictitious"] = p.fictitious;
  j["answerable"] = p.answerable;
  j["failures"] = p.failures;
  ojson recs = ojson::array();
  for (const auto& r : p.records)
    recs.push_back({{"prompt", r.probe.prompt},
                    {"entity_kind", r.probe.entity_kind},
                    {"expect_idk", r.probe.expect_idk},
                    {"response", r.response},
                    {"idk", r.idk ? ojson(*r.idk) : ojson(nullptr)},
                    {"failure", r.failure ? ojson(*r.failure) : ojson(nullptr)}});
  j["records"] = recs;
  j["warnings"] = p.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// run_eval

/// Everything a run needs, built and checked before any generation.
struct PreparedRun {
  RunConfig config;
  Dataset dataset;
  Providers providers;
  CorpusStats tfidf;
  MetricSuite suite;
};

inline std::unique_ptr<PreparedRun> prepare_run(const RunConfig& config) {
  auto run = std::make_unique<PreparedRun>();
  run->config = config;
  run->dataset = load_dataset(config.dataset_path);
  if (run->dataset.items.empty()) throw ConfigError("dataset " + config.dataset_path.string() + " has no items");
  for (const auto& [role, spec] : config.providers) build_provider(run->providers, role, spec);
  if (config.rate_limit_tpm) {
    run->providers.bucket = std::make_shared<TokenBucket>(*config.rate_limit_tpm);
    run->providers.limited = std::make_unique<RateLimitedGenerator>(*run->providers.generator, run->providers.bucket);
  }
  std::vector<std::string> refs;
  for (const auto& it : run->dataset.items) refs.insert(refs.end(), it.references.begin(), it.references.end());
  run->tfidf = CorpusStats::build(refs);
  run->suite = MetricSuite(config.metrics, run->providers.context(&run->tfidf));
  run->suite.check_prerequisites(run->dataset);
  if (config.self_consistency && config.self_consistency->equivalence == Equivalence::embed_cluster && !run->providers.embedder)
    throw ConfigError("embed_cluster self-consistency needs an embedder provider");
  return run;
}

inline std::string make_run_id(const std::string& config_hash, uint64_t seed) {
  return sha256_hex(config_hash + ":" + std::to_string(seed)).substr(0, 16);
}

struct RunSections {
  bool items = true;
  bool sensitivity = true;
  bool ablation = true;
  bool variance = true;
  bool probes = true;
};

inline std::string render_json(const EvalReport& r) { return to_json(r).dump(2) + "\n"; }

/// Executes the configured pipeline. Per-item provider failures degrade
/// coverage; configuration problems throw before any generation.
inline EvalReport run_eval(const RunConfig& config, RunSections sections = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now_iso8601();
  auto run = prepare_run(config);
  const auto& items = run->dataset.items;
  const Generator& gen = *run->providers.system();

  EvalReport r;
  r.dataset_name = run->dataset.name;
  r.dataset_version = run->dataset.version;
  r.config_hash = config.config_hash;
  r.seed = config.seed;
  r.run_id = make_run_id(config.config_hash, config.seed);
  r.confidence = config.confidence;
  for (const auto& m : config.metrics) r.metrics.push_back({m.name, m.scale(), m.higher_is_better()});

  if (sections.items) {
    std::vector<ItemRecord> records(items.size());
    parallel_for(items.size(), config.workers, [&](std::size_t i) {
      const auto& item = items[i];
      auto& rec = records[i];
      rec.id = item.id;
      rec.tags.assign(item.tags.begin(), item.tags.end());
      GenerationRecord g;
      try {
        if (config.self_consistency) {
          auto p = *config.self_consistency;
          p.seed = hash_combine(config.seed, hash64(item.id));
          p.embedder = run->providers.embedder.get();
          const auto sc = self_consistency(item.prompt, gen, p);
          g.text = sc.modal_response;
          g.provider = "self_consistency";
          rec.agreement_rate = sc.agreement_rate;
        } else {
          g = gen.generate(item.prompt, item_params(config.generation, config.seed, item.id));
        }
      } catch (const std::exception& e) {
        rec.failure = e.what();
        g = GenerationRecord{};
      }
      rec.response = g.text;
      rec.retries = g.retries;
      for (auto& [name, v] : run->suite.score(item, g)) {
        rec.scores[name] = v.value;
        if (!v.error.empty()) rec.errors[name] = v.error;
      }
      if (rec.failure)
        for (const auto& m : config.metrics) {
          rec.scores[m.name] = std::nullopt;
          rec.errors[m.name] = "generation failed";
        }
    });
    std::sort(records.begin(), records.end(), [](const ItemRecord& a, const ItemRecord& b) { return a.id < b.id; });
    r.items = std::move(records);
    if (config.self_consistency && config.self_consistency->generation.temperature == 0)
      r.warnings.push_back("self-consistency temperature is 0; agreement rates are uninformative");
  }
  for (const auto& m : config.metrics) r.aggregates[m.name] = aggregate_scores(r.items, m.name, config.confidence);

  if (config.sensitivity && sections.sensitivity) {
    SensitivityParams p;
    p.generation = config.generation;
    p.seed = config.seed;
    p.top_n = config.sensitivity->top_n;
    p.workers = config.workers;
    r.methodology["sensitivity"] = to_json(sensitivity_analysis(run->dataset, gen, run->suite, config.sensitivity->perturbations, p));
  }
  if (config.ablation && sections.ablation) {
    auto p = *config.ablation;
    p.generation = config.generation;
    p.seed = config.seed;
    p.workers = config.workers;
    r.methodology["ablation"] = to_json(grounding_ablation(run->dataset, gen, run->suite, p));
  }
  if (config.variance_runs && sections.variance) {
    VarianceParams p;
    p.n_runs = *config.variance_runs;
    p.generation = config.generation;
    p.seed = config.seed;
    p.confidence = config.confidence;
    p.workers = config.workers;
    r.methodology["variance"] = to_json(variance_baseline(run->dataset, gen, run->suite, p));
  }
  if (config.probes && sections.probes) {
    const auto set = generate_probes(config.probes->templates, config.probes->params);
    ProbeRunParams p;
    p.generation = config.generation;
    p.refusal_patterns = config.refusal_patterns;
    p.seed = config.seed;
    p.workers = config.workers;
    r.methodology["probes"] = to_json(hallucination_and_nonresponse(set, gen, p), set.seed);
  }

  r.timing = {{"started", started},
              {"finished", utc_now_iso8601()},
              {"elapsed_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  if (config.output_path) {
    if (config.output_path->has_parent_path()) fs::create_directories(config.output_path->parent_path());
    write_file_atomic(*config.output_path, render_json(r));
  }
  return r;
}

}  // namespace evalkit
