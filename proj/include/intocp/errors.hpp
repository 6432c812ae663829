#pragma once

#include <stdexcept>
#include <string>

namespace intocp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimensions or sample counts that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver gave up; carries the last residual seen.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual, int iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}

  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// A discrete linear operator is numerically singular.
class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& what, double rcond)
      : Error(what), rcond_(rcond) {}

  /// Reciprocal condition estimate at the time of failure.
  double rcond() const { return rcond_; }

 private:
  double rcond_;
};

/// A kernel that should be symmetric is not.
class SymmetryError : public Error {
 public:
  SymmetryError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}

  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Bad configuration; `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(key) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace intocp
