#pragma once

#include <stdexcept>
#include <string>

namespace af {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor shapes incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Framing/strategy/image geometry mismatch.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents are not what they claim to be
/// (bad magic, unsupported version, checksum failure, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem-level failure (missing file, unwritable path).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace af
