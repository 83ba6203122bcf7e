#pragma once

// Generic JSON-over-HTTP providers. A request template is rendered with
// the call's variables, POSTed, and the answer pulled out of the response
// body with a dot path such as "choices.0.text".

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "evalkit/errors.hpp"
#include "evalkit/providers.hpp"

namespace evalkit {

struct HttpSpec {
  std::string endpoint;          // scheme://host[:port]/path
  std::string request_template;  // JSON text with {placeholders}
  std::string response_path;
  std::optional<std::string> logprobs_path;
  std::optional<std::string> auth_env;  // name of the env var holding the key
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
  std::map<std::string, std::string> headers;
  double timeout_s = 30;
  int max_retries = 3;
  double backoff_base_s = 0.5;

  void validate() const {
    if (endpoint.empty()) throw ConfigError("http provider needs an endpoint");
    if (request_template.empty()) throw ConfigError("http provider needs a request template");
    if (response_path.empty()) throw ConfigError("http provider needs a response extraction path");
    if (!(timeout_s > 0)) throw ConfigError("http timeout must be positive");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (!(backoff_base_s >= 0)) throw ConfigError("backoff base must be >= 0");
  }
};

using Sleeper = std::function<void(double seconds)>;

inline Sleeper real_sleeper() {
  return [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
}

/// Walks "a.0.b" through objects and arrays; nullptr on any miss.
inline const nlohmann::json* json_path(const nlohmann::json& root, std::string_view path) {
  const nlohmann::json* cur = &root;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const std::size_t dot = std::min(path.find('.', pos), path.size());
    const std::string key(path.substr(pos, dot - pos));
    if (cur->is_object()) {
      auto it = cur->find(key);
      if (it == cur->end()) return nullptr;
      cur = &*it;
    } else if (cur->is_array()) {
      if (key.empty() || key.find_first_not_of("0123456789") != std::string::npos) return nullptr;
      const auto idx = std::stoull(key);
      if (idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    } else {
      return nullptr;
    }
    pos = dot + 1;
  }
  return cur;
}

/// Substitutes {name} placeholders: strings are inserted JSON-escaped
/// (without quotes), everything else as its JSON text.
inline std::string render_request(std::string_view tmpl, const std::map<std::string, nlohmann::json>& vars) {
  std::string out(tmpl);
  for (const auto& [name, value] : vars) {
    const std::string key = "{" + name + "}";
    std::string text = value.dump();
    if (value.is_string()) text = text.substr(1, text.size() - 2);
    for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + text.size()))
      out.replace(pos, key.size(), text);
  }
  return out;
}

inline std::string excerpt(std::string_view body, std::size_t max = 200) {
  return body.size() <= max ? std::string(body) : std::string(body.substr(0, max)) + "...";
}

/// One configured endpoint with retry/backoff. Safe to share across
/// threads: each call opens its own client.
class HttpEndpoint {
 public:
  explicit HttpEndpoint(HttpSpec spec, Sleeper sleeper = real_sleeper()) : spec_(std::move(spec)), sleep_(std::move(sleeper)) {
    spec_.validate();
    const auto scheme_end = spec_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must include a scheme: " + spec_.endpoint);
    const auto path_start = spec_.endpoint.find('/', scheme_end + 3);
    base_ = spec_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : spec_.endpoint.substr(path_start);
    if (spec_.auth_env && !std::getenv(spec_.auth_env->c_str()))
      throw ConfigError("environment variable " + *spec_.auth_env + " named by auth_env is not set");
  }

  const HttpSpec& spec() const { return spec_; }

  /// POSTs the rendered template and returns the parsed body. `retries`
  /// receives the number of retried attempts.
  nlohmann::json post(const std::map<std::string, nlohmann::json>& vars, int* retries = nullptr) const {
    const std::string body = render_request(spec_.request_template, vars);
    if (!nlohmann::json::accept(body)) throw ConfigError("request template does not render to valid JSON");
    httplib::Headers headers(spec_.headers.begin(), spec_.headers.end());
    if (spec_.auth_env) headers.emplace(spec_.auth_header, spec_.auth_prefix + std::getenv(spec_.auth_env->c_str()));

    std::optional<ProviderError> last;
    for (int attempt = 0; attempt <= spec_.max_retries; ++attempt) {
      if (attempt > 0) sleep_(spec_.backoff_base_s * std::ldexp(1.0, attempt - 1));
      if (retries) *retries = attempt;
      httplib::Client cli(base_);
      const auto secs = static_cast<time_t>(spec_.timeout_s);
      const auto usecs = static_cast<time_t>((spec_.timeout_s - static_cast<double>(secs)) * 1e6);
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      cli.set_write_timeout(secs, usecs);
      auto res = cli.Post(path_, headers, body, "application/json");
      if (!res) {
        const auto err = res.error();
        const bool timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
        last = ProviderError(timeout ? ProviderErrorKind::timeout : ProviderErrorKind::transport,
                             spec_.endpoint + ": " + httplib::to_string(err));
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last = ProviderError(ProviderErrorKind::http_status, spec_.endpoint + ": HTTP " + std::to_string(res->status), res->status,
                             excerpt(res->body));
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw ProviderError(ProviderErrorKind::http_status, spec_.endpoint + ": HTTP " + std::to_string(res->status), res->status,
                            excerpt(res->body));
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded())
        throw ProviderError(ProviderErrorKind::extraction, "response body is not JSON", res->status, excerpt(res->body));
      return parsed;
    }
    throw ProviderError(ProviderErrorKind::retries_exhausted,
                        "gave up after " + std::to_string(spec_.max_retries + 1) + " attempts: " + last->what(), last->status(),
                        last->excerpt());
  }

  const nlohmann::json& extract(const nlohmann::json& body, const std::string& path) const {
    const auto* v = json_path(body, path);
    if (!v) {
      const auto ex = excerpt(body.dump());
      throw ProviderError(ProviderErrorKind::extraction, "extraction path '" + path + "' not found in " + ex, std::nullopt, ex);
    }
    return *v;
  }

  std::vector<double> extract_numbers(const nlohmann::json& body, const std::string& path) const {
    const auto& v = extract(body, path);
    if (!v.is_array()) throw ProviderError(ProviderErrorKind::extraction, "'" + path + "' is not an array", std::nullopt, excerpt(body.dump()));
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ProviderError(ProviderErrorKind::extraction, "'" + path + "' holds a non-number", std::nullopt, excerpt(body.dump()));
      out.push_back(x.get<double>());
    }
    return out;
  }

 private:
  HttpSpec spec_;
  Sleeper sleep_;
  std::string base_;
  std::string path_;
};

class HttpGenerator : public Generator {
 public:
  explicit HttpGenerator(HttpSpec spec, Sleeper sleeper = real_sleeper()) : ep_(std::move(spec), std::move(sleeper)) {}

  GenerationRecord generate(std::string_view prompt, const GenerationParams& params) const override {
    params.validate();
    std::map<std::string, nlohmann::json> vars = {
        {"prompt", std::string(prompt)},
        {"temperature", params.temperature},
        {"top_p", params.top_p},
        {"max_tokens", params.max_tokens},
        {"seed", params.seed ? nlohmann::json(*params.seed) : nlohmann::json(nullptr)},
    };
    GenerationRecord rec;
    rec.provider = "http";
    const auto body = ep_.post(vars, &rec.retries);
    const auto& text = ep_.extract(body, ep_.spec().response_path);
    if (!text.is_string())
      throw ProviderError(ProviderErrorKind::extraction, "'" + ep_.spec().response_path + "' is not a string", std::nullopt, excerpt(body.dump()));
    rec.text = text.get<std::string>();
    if (ep_.spec().logprobs_path) rec.token_logprobs = ep_.extract_numbers(body, *ep_.spec().logprobs_path);
    return rec;
  }

 private:
  HttpEndpoint ep_;
};

/// Template placeholder: {text}.
class HttpEmbedder : public Embedder {
 public:
  explicit HttpEmbedder(HttpSpec spec, Sleeper sleeper = real_sleeper()) : ep_(std::move(spec), std::move(sleeper)) {}

  std::vector<double> embed(std::string_view text) const override {
    const auto body = ep_.post({{"text", std::string(text)}});
    return ep_.extract_numbers(body, ep_.spec().response_path);
  }

 private:
  HttpEndpoint ep_;
};

/// Template placeholder: {text}; the path selects per-token log-probs.
class HttpLogProbScorer : public LogProbScorer {
 public:
  explicit HttpLogProbScorer(HttpSpec spec, Sleeper sleeper = real_sleeper()) : ep_(std::move(spec), std::move(sleeper)) {}

  std::vector<double> token_logprobs(std::string_view text) const override {
    const auto body = ep_.post({{"text", std::string(text)}});
    return ep_.extract_numbers(body, ep_.spec().response_path);
  }

 private:
  HttpEndpoint ep_;
};

/// Template placeholders: {premise}, {hypothesis}; the path selects a
/// 3-vector in the order entailment, neutral, contradiction.
class HttpNliScorer : public NliScorer {
 public:
  explicit HttpNliScorer(HttpSpec spec, Sleeper sleeper = real_sleeper()) : ep_(std::move(spec), std::move(sleeper)) {}

  std::array<double, 3> score(std::string_view premise, std::string_view hypothesis) const override {
    const auto body = ep_.post({{"premise", std::string(premise)}, {"hypothesis", std::string(hypothesis)}});
    const auto v = ep_.extract_numbers(body, ep_.spec().response_path);
    if (v.size() != 3) throw ProviderError(ProviderErrorKind::extraction, "NLI scores must have 3 entries", std::nullopt, excerpt(body.dump()));
    return {v[0], v[1], v[2]};
  }

 private:
  HttpEndpoint ep_;
};

}  // namespace evalkit
