#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace danp {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to a primitive's rule.
class ShapeError : public Error {
 public:
  ShapeError(std::string primitive, std::string lhs, std::string rhs)
      : Error(primitive + ": shape mismatch " + lhs + " vs " + rhs),
        primitive_(std::move(primitive)),
        lhs_(std::move(lhs)),
        rhs_(std::move(rhs)) {}

  const std::string& primitive() const noexcept { return primitive_; }
  const std::string& lhs() const noexcept { return lhs_; }
  const std::string& rhs() const noexcept { return rhs_; }

 private:
  std::string primitive_;
  std::string lhs_;
  std::string rhs_;
};

/// A computation produced NaN/Inf or otherwise diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// No threshold separates a histogram into two non-empty classes.
class DegenerateThresholdError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// A precondition on an argument was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// One or more required artifacts are absent on disk.
class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(std::vector<std::string> paths)
      : Error(describe(paths)), paths_(std::move(paths)) {}

  const std::vector<std::string>& paths() const noexcept { return paths_; }

 private:
  static std::string describe(const std::vector<std::string>& paths) {
    std::string msg = "missing artifacts:";
    for (const auto& p : paths) msg += "\n  " + p;
    return msg;
  }

  std::vector<std::string> paths_;
};

}  // namespace danp
