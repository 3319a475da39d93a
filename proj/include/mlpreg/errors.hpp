#pragma once

#include <stdexcept>
#include <string>

namespace mlpreg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class IndexOutOfRange : public Error {
 public:
  using Error::Error;
};

/// A Cholesky pivot was <= 0 (or not finite).
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// The empirical residual covariance is singular, even after jitter.
/// Happens on exact interpolation or when n <= d.
class SingularCovariance : public Error {
 public:
  using Error::Error;
};

class LineSearchBreakdown : public Error {
 public:
  using Error::Error;
};

class AllRestartsFailed : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or input file. `line` is 1-based, 0 when unknown.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

  /// Same error, message prefixed with the file it came from.
  static ConfigError in_file(const std::string& path, const ConfigError& e) {
    return ConfigError(path + ": " + e.what(), e.line(), 0);
  }

 private:
  ConfigError(const std::string& full, int line, int) : Error(full), line_(line) {}
  int line_;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionMismatch(what);
}

}  // namespace detail
}  // namespace mlpreg
