#pragma once

#include <stdexcept>
#include <string>

namespace deep3d {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or calibration. `field()` names the offending key when known.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what, std::string field = {})
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

/// Input file or buffer does not follow the expected encoding.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Tensor or image dimensions are incompatible.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Dataset layout problem (missing companion file, duplicate id, ...).
class DatasetError : public Error {
public:
  using Error::Error;
};

/// Numerical failure during training or evaluation.
class NumericError : public Error {
public:
  using Error::Error;
};

}  // namespace deep3d
