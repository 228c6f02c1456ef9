#pragma once

#include <stdexcept>
#include <string>

namespace scorediff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument or configuration value is outside its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Tensor or sequence dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed or has the wrong layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ParameterError(what);
}

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail
}  // namespace scorediff
