#pragma once

#include <stdexcept>
#include <string>

namespace mars {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape / dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values (NaN/Inf) appeared in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid geometry (degenerate mesh, non-watertight input, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (OBJ files, config files).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input (checkpoints, voxel grids).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration between components.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failure, surfaced with the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or otherwise failed.
class TrainError : public Error {
 public:
  using Error::Error;
};

}  // namespace mars
