#pragma once

#include <stdexcept>
#include <string>

namespace selfboost {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in an operation result.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An out-of-domain hyperparameter (tau <= 0, alpha outside [0,1], ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape: unreachable leaves, stale variables.
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Invalid caller data such as an out-of-range label.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration; carries the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace selfboost
