#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace evalkit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset files that cannot be read or violate the data model.
class DatasetError : public Error {
 public:
  DatasetError(const std::string& what, std::optional<std::size_t> line = std::nullopt)
      : Error(line ? "line " + std::to_string(*line) + ": " + what : what), line_(line) {}

  std::optional<std::size_t> line() const { return line_; }

 private:
  std::optional<std::size_t> line_;
};

/// Bad parameters or run configuration; always detected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Inputs outside an operation's domain (empty samples, mismatched lengths).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

enum class ProviderErrorKind {
  timeout,
  transport,
  http_status,
  extraction,
  retries_exhausted,
  injected,  // failure directive from a mock behavior table
  unavailable,
  invalid_output,
};

inline const char* to_string(ProviderErrorKind k) {
  switch (k) {
    case ProviderErrorKind::timeout: return "timeout";
    case ProviderErrorKind::transport: return "transport";
    case ProviderErrorKind::http_status: return "http_status";
    case ProviderErrorKind::extraction: return "extraction";
    case ProviderErrorKind::retries_exhausted: return "retries_exhausted";
    case ProviderErrorKind::injected: return "injected";
    case ProviderErrorKind::unavailable: return "unavailable";
    case ProviderErrorKind::invalid_output: return "invalid_output";
  }
  return "unknown";
}

/// Failure of a generation/scoring provider. Per-item provider failures are
/// recorded by callers and never abort a run.
class ProviderError : public Error {
 public:
  ProviderError(ProviderErrorKind kind, const std::string& what,
                std::optional<int> status = std::nullopt, std::string excerpt = {})
      : Error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        status_(status),
        excerpt_(std::move(excerpt)) {}

  ProviderErrorKind kind() const { return kind_; }
  std::optional<int> status() const { return status_; }
  const std::string& excerpt() const { return excerpt_; }

 private:
  ProviderErrorKind kind_;
  std::optional<int> status_;
  std::string excerpt_;
};

}  // namespace evalkit
