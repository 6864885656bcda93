#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace racanet {

// All library errors carry a short machine-readable code ("shape-mismatch",
// "malformed-file", ...). The CLI maps ConfigError to exit code 2 and
// DataError to exit code 3.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(code + ": " + msg), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape-mismatch", msg) {}
  ShapeError(const std::string& code, const std::string& msg) : Error(code, msg) {}
};

}  // namespace racanet
