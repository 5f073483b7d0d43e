#pragma once

#include <stdexcept>
#include <string>

namespace wmseg {

/// Base class for every error raised by the library. The CLI maps the
/// category to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File-format problems (bad magic, truncation, checksum, manifest mismatch).
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConfigMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// Raised by strict cropping when a nonzero voxel would be discarded.
class ContentLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace wmseg
