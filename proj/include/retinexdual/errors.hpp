#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace retinexdual {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or dimensions incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf found in an input that must be finite.
class NonFiniteInputError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value. `step()` is the offending
/// sequence or optimizer step, or -1 when not applicable.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::int64_t step = -1)
      : Error(what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

/// Invalid configuration: unknown keys, ill-typed values, broken invariants,
/// or a checkpoint that does not match the configured model.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset or image-file problem.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Input too large for a single untiled pass.
class ResourceError : public Error {
 public:
  using Error::Error;
};

}  // namespace retinexdual
