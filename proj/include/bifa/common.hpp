#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bifa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using MatrixList = std::vector<Matrix>;
using VectorList = std::vector<Vector>;

/// Base class for every error raised by the library. `kind()` feeds the
/// status code reported across the C boundary.
class Error : public std::runtime_error {
 public:
  enum class Kind {
    kSchema,
    kParse,
    kDimension,
    kDomain,
    kNumeric,
    kGuard,
    kConfig,
    kIo,
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& w) : Error(Kind::kSchema, w) {}
};
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& w) : Error(Kind::kParse, w) {}
};
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& w) : Error(Kind::kDimension, w) {}
};
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& w) : Error(Kind::kDomain, w) {}
};
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& w) : Error(Kind::kNumeric, w) {}
};
/// Raised when a method refuses an input it cannot handle in reasonable
/// time or memory (e.g. PFA above its variable cap).
class GuardError : public Error {
 public:
  explicit GuardError(const std::string& w) : Error(Kind::kGuard, w) {}
};
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& w) : Error(Kind::kConfig, w) {}
};
class IoError : public Error {
 public:
  explicit IoError(const std::string& w) : Error(Kind::kIo, w) {}
};

inline constexpr const char* kVersion = "0.3.0";

}  // namespace bifa
