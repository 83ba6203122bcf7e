#pragma once

// Provider interfaces for everything model-backed (generation, token
// log-probabilities, embeddings, NLI) plus deterministic table-driven mocks.
// Implementations must be safe to call from several workers at once.

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "evalkit/errors.hpp"
#include "evalkit/text.hpp"

namespace evalkit {

struct GenerationParams {
  double temperature = 0.0;
  double top_p = 1.0;
  int max_tokens = 512;
  std::optional<uint64_t> seed;

  void validate() const {
    if (!(temperature >= 0) || !std::isfinite(temperature)) throw ConfigError("temperature must be >= 0");
    if (!(top_p > 0 && top_p <= 1)) throw ConfigError("top_p must lie in (0,1]");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  }
};

struct GenerationRecord {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
  std::string provider;  // "mock", "http"
  int retries = 0;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual GenerationRecord generate(std::string_view prompt, const GenerationParams& params) const = 0;
};

class LogProbScorer {
 public:
  virtual ~LogProbScorer() = default;
  /// Natural-log probability of each token of `text`.
  virtual std::vector<double> token_logprobs(std::string_view text) const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

/// Raw NLI scores in the order entailment, neutral, contradiction.
class NliScorer {
 public:
  virtual ~NliScorer() = default;
  virtual std::array<double, 3> score(std::string_view premise, std::string_view hypothesis) const = 0;
};

// ---------------------------------------------------------------------------
// Mock generation

/// One behavior-table row. The first row whose regex is found in the prompt
/// answers it.
struct MockEntry {
  std::string pattern;
  std::vector<std::string> responses;
  std::vector<std::vector<double>> logprobs;  // optional, parallel to responses
  std::optional<std::string> fail;            // e.g. "timeout", "http_500", "transport"
  bool random_pick = false;                   // pick by (seed, prompt, call) instead of cycling
};

struct BehaviorTable {
  std::vector<MockEntry> entries;
  std::optional<MockEntry> fallback;

  /// Accepts {"entries":[...], "default":{...}} or the shorthand
  /// {"<regex>": ["response", ...], ...} (key order preserved).
  static BehaviorTable from_json(const nlohmann::ordered_json& j) {
    BehaviorTable t;
    if (!j.is_object()) throw ConfigError("behavior table must be a JSON object");
    auto entry_from = [](const nlohmann::ordered_json& e, std::string pattern) {
      MockEntry m;
      m.pattern = std::move(pattern);
      if (e.is_array() || e.is_string()) {
        if (e.is_string()) m.responses.push_back(e.get<std::string>());
        else
          for (const auto& r : e) m.responses.push_back(r.get<std::string>());
        return m;
      }
      if (!e.is_object()) throw ConfigError("behavior table entry must be an object, array or string");
      if (e.contains("pattern")) m.pattern = e["pattern"].get<std::string>();
      if (e.contains("responses"))
        for (const auto& r : e["responses"]) m.responses.push_back(r.get<std::string>());
      if (e.contains("response")) m.responses.push_back(e["response"].get<std::string>());
      if (e.contains("logprobs"))
        for (const auto& lp : e["logprobs"]) m.logprobs.push_back(lp.get<std::vector<double>>());
      if (e.contains("fail")) m.fail = e["fail"].get<std::string>();
      if (e.contains("pick")) m.random_pick = e["pick"].get<std::string>() == "random";
      if (m.responses.empty() && !m.fail) throw ConfigError("behavior entry '" + m.pattern + "' has no responses");
      return m;
    };
    if (j.contains("entries")) {
      for (const auto& e : j["entries"]) t.entries.push_back(entry_from(e, {}));
      if (j.contains("default")) t.fallback = entry_from(j["default"], {});
      return t;
    }
    for (const auto& [k, v] : j.items()) {
      if (k == "default") t.fallback = entry_from(v, {});
      else t.entries.push_back(entry_from(v, k));
    }
    return t;
  }
};

inline ProviderError injected_failure(const std::string& directive) {
  if (directive == "timeout") return ProviderError(ProviderErrorKind::timeout, "mock timeout");
  if (directive == "transport") return ProviderError(ProviderErrorKind::transport, "mock transport failure");
  if (directive.rfind("http_", 0) == 0) {
    const int status = std::stoi(directive.substr(5));
    return ProviderError(ProviderErrorKind::http_status, "mock HTTP " + std::to_string(status), status);
  }
  return ProviderError(ProviderErrorKind::injected, "mock failure: " + directive);
}

/// Deterministic generator driven by a behavior table. Multi-response rows
/// cycle in listed order per distinct prompt (first call gets the first
/// response); rows marked random pick from (seed, prompt hash, call index).
class MockGenerator : public Generator {
 public:
  explicit MockGenerator(BehaviorTable table, uint64_t seed = 0) : table_(std::move(table)), seed_(seed) {
    for (const auto& e : table_.entries) {
      try {
        regexes_.emplace_back(e.pattern, std::regex::ECMAScript);
      } catch (const std::regex_error& err) {
        throw ConfigError("invalid behavior pattern '" + e.pattern + "': " + err.what());
      }
    }
  }

  GenerationRecord generate(std::string_view prompt, const GenerationParams&) const override {
    const std::string p(prompt);
    const MockEntry* entry = nullptr;
    std::size_t entry_idx = table_.entries.size();
    for (std::size_t i = 0; i < regexes_.size(); ++i) {
      if (std::regex_search(p, regexes_[i])) {
        entry = &table_.entries[i];
        entry_idx = i;
        break;
      }
    }
    if (!entry) {
      if (!table_.fallback) return {"", std::nullopt, "mock", 0};
      entry = &*table_.fallback;
    }
    if (entry->fail) throw injected_failure(*entry->fail);

    const uint64_t prompt_hash = hash64(p);
    uint64_t call = 0;
    {
      std::lock_guard lock(mu_);
      call = calls_[{entry_idx, prompt_hash}]++;
    }
    const std::size_t k = entry->responses.size();
    const std::size_t idx = entry->random_pick
                                ? static_cast<std::size_t>(hash_combine(hash_combine(seed_, prompt_hash), call) % k)
                                : static_cast<std::size_t>(call % k);
    GenerationRecord rec;
    rec.text = entry->responses[idx];
    rec.provider = "mock";
    if (idx < entry->logprobs.size()) rec.token_logprobs = entry->logprobs[idx];
    return rec;
  }

 private:
  BehaviorTable table_;
  uint64_t seed_;
  std::vector<std::regex> regexes_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<std::size_t, uint64_t>, uint64_t> calls_;
};

// ---------------------------------------------------------------------------
// Mock scorers

/// Log-probabilities from a pattern table; unmatched texts get a
/// deterministic pseudo-random value in [-8, -0.5] per word token.
class MockLogProbScorer : public LogProbScorer {
 public:
  struct Row {
    std::string pattern;
    std::vector<double> logprobs;
    std::optional<std::string> fail;
  };

  MockLogProbScorer(std::vector<Row> rows = {}, uint64_t seed = 0) : rows_(std::move(rows)), seed_(seed) {
    for (const auto& r : rows_) regexes_.emplace_back(r.pattern, std::regex::ECMAScript);
  }

  static MockLogProbScorer from_json(const nlohmann::ordered_json& j, uint64_t seed) {
    std::vector<Row> rows;
    const auto& arr = j.contains("entries") ? j["entries"] : j;
    if (arr.is_array()) {
      for (const auto& e : arr) {
        Row r{e.at("pattern").get<std::string>(), {}, std::nullopt};
        if (e.contains("logprobs")) r.logprobs = e["logprobs"].get<std::vector<double>>();
        if (e.contains("fail")) r.fail = e["fail"].get<std::string>();
        rows.push_back(std::move(r));
      }
    } else if (arr.is_object()) {
      for (const auto& [k, v] : arr.items()) rows.push_back({k, v.get<std::vector<double>>(), std::nullopt});
    }
    return MockLogProbScorer(std::move(rows), seed);
  }

  std::vector<double> token_logprobs(std::string_view text) const override {
    const std::string t(text);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (std::regex_search(t, regexes_[i])) {
        if (rows_[i].fail) throw injected_failure(*rows_[i].fail);
        return rows_[i].logprobs;
      }
    }
    std::vector<double> out;
    for (const auto& w : words(text)) {
      const uint64_t h = hash64(w, seed_);
      out.push_back(-0.5 - 7.5 * static_cast<double>(h >> 11) * 0x1.0p-53);
    }
    if (out.empty()) out.push_back(-1.0);
    return out;
  }

 private:
  std::vector<Row> rows_;
  std::vector<std::regex> regexes_;
  uint64_t seed_;
};

/// Embeddings from an exact-text table; other texts get a hashed
/// bag-of-words vector of dimension `dim`.
class MockEmbedder : public Embedder {
 public:
  explicit MockEmbedder(std::map<std::string, std::vector<double>> table = {}, std::size_t dim = 64,
                        uint64_t seed = 0)
      : table_(std::move(table)), dim_(dim), seed_(seed) {
    if (dim_ == 0) throw ConfigError("embedding dimension must be >= 1");
  }

  static MockEmbedder from_json(const nlohmann::ordered_json& j, uint64_t seed) {
    std::map<std::string, std::vector<double>> table;
    std::size_t dim = j.value("dim", std::size_t{64});
    if (j.contains("vectors"))
      for (const auto& [k, v] : j["vectors"].items()) table[k] = v.get<std::vector<double>>();
    return MockEmbedder(std::move(table), dim, seed);
  }

  std::vector<double> embed(std::string_view text) const override {
    if (auto it = table_.find(std::string(text)); it != table_.end()) return it->second;
    std::vector<double> v(dim_, 0.0);
    for (const auto& w : words(text)) {
      const uint64_t h = hash64(w, seed_);
      v[h % dim_] += (h >> 63) ? 1.0 : -1.0;
    }
    return v;
  }

 private:
  std::map<std::string, std::vector<double>> table_;
  std::size_t dim_;
  uint64_t seed_;
};

/// NLI scores from (premise regex, hypothesis regex) rows; unmatched pairs
/// are neutral.
class MockNliScorer : public NliScorer {
 public:
  struct Row {
    std::string premise_pattern;
    std::string hypothesis_pattern;
    std::array<double, 3> scores{};
  };

  explicit MockNliScorer(std::vector<Row> rows = {}) : rows_(std::move(rows)) {
    for (const auto& r : rows_) {
      regexes_.emplace_back(std::regex(r.premise_pattern, std::regex::ECMAScript),
                            std::regex(r.hypothesis_pattern, std::regex::ECMAScript));
    }
  }

  static MockNliScorer from_json(const nlohmann::ordered_json& j) {
    std::vector<Row> rows;
    const auto& arr = j.contains("entries") ? j["entries"] : j;
    for (const auto& e : arr) {
      Row r;
      r.premise_pattern = e.value("premise", std::string{});
      r.hypothesis_pattern = e.value("hypothesis", std::string{});
      const auto s = e.at("scores").get<std::vector<double>>();
      if (s.size() != 3) throw ConfigError("NLI mock scores need exactly three values");
      r.scores = {s[0], s[1], s[2]};
      rows.push_back(std::move(r));
    }
    return MockNliScorer(std::move(rows));
  }

  std::array<double, 3> score(std::string_view premise, std::string_view hypothesis) const override {
    const std::string p(premise), h(hypothesis);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (std::regex_search(p, regexes_[i].first) && std::regex_search(h, regexes_[i].second))
        return rows_[i].scores;
    }
    return {0.0, 1.0, 0.0};
  }

 private:
  std::vector<Row> rows_;
  std::vector<std::pair<std::regex, std::regex>> regexes_;
};

}  // namespace evalkit
