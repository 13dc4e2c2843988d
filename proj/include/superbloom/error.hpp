#pragma once

#include <stdexcept>
#include <string>

namespace superbloom {

// Error classes map one-to-one onto CLI exit codes (see cli.hpp).
enum class ErrorKind { kConfig, kIo, kDivergence, kInfeasibleScheme, kInvalidArgument };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::kDivergence, what) {}
};

struct InfeasibleSchemeError : Error {
  explicit InfeasibleSchemeError(const std::string& what)
      : Error(ErrorKind::kInfeasibleScheme, what) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::kInvalidArgument, what) {}
};

}  // namespace superbloom
