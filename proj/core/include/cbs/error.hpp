#pragma once

#include <stdexcept>
#include <string>

namespace cbs {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operands disagree on height, width, channel or level counts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition (negative radius, unknown class, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A model is unloaded, corrupt, or incompatible with the running build.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// File or directory could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}

  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace cbs
