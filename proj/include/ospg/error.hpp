#pragma once

#include <stdexcept>
#include <string>

namespace ospg {

// Every failure raised by the library derives from Error. `kind()` is a short
// stable identifier used as the machine-parseable prefix by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& message) : Error("value", message) {}
};

}  // namespace ospg
