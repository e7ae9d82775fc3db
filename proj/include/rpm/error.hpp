#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rpm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad backend or run configuration, including non-retryable HTTP 4xx.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class RetryExhaustedError : public Error {
 public:
  using Error::Error;
};

class ReplayMissError : public Error {
 public:
  explicit ReplayMissError(std::string key)
      : Error("replay miss: no recorded response for key " + key), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class RenderError : public Error {
 public:
  RenderError(const std::string& message, std::string key)
      : Error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Model output that could not be turned into the expected structure.
// Carries the raw completion for audit.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw)
      : Error(message), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

// Well-formed output that breaks the call's contract (wrong count, bad index).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  LoadError(const std::string& message, std::size_t line)
      : Error(message), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Wraps a failure with the pipeline stage (and item) it happened in.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace rpm
