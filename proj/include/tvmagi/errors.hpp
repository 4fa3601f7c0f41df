#pragma once

#include <stdexcept>
#include <string>

namespace tvmagi {

// exit-code buckets for the CLI: 2 = bad config/usage, 3 = numerical failure
enum class ErrorKind { Config = 2, Numeric = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

class DomainError : public Error {
public:
  explicit DomainError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

class NonFiniteError : public Error {
public:
  explicit NonFiniteError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

class FactorizationError : public Error {
public:
  explicit FactorizationError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

class FitError : public Error {
public:
  explicit FitError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::Config, msg) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(ErrorKind::Config, msg) {}
};

}  // namespace tvmagi
