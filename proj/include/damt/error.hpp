#pragma once

#include <stdexcept>
#include <string>

namespace damt {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or missing configuration (unknown model id, unresolvable path, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed input data; carries the 1-based line number when known.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, long line = 0)
      : Error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// LLM output that could not be parsed even after repair.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Replay backend asked for a completion that has no fixture.
class FixtureMissingError : public Error {
 public:
  explicit FixtureMissingError(const std::string& cache_key)
      : Error("no replay fixture for cache key " + cache_key), key_(cache_key) {}
  const std::string& cache_key() const { return key_; }

 private:
  std::string key_;
};

// Provider-side failure that is worth retrying (HTTP 429/5xx, transport).
class RetryableError : public Error {
 public:
  explicit RetryableError(const std::string& msg) : Error(msg) {}
};

// Provider failure after retry exhaustion, or a non-retryable provider error.
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& msg) : Error(msg) {}
};

// External scorer protocol violation (nonzero exit, count mismatch, bad line).
class ScorerError : public Error {
 public:
  explicit ScorerError(const std::string& msg) : Error(msg) {}
};

}  // namespace damt
