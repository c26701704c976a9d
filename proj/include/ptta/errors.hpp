#pragma once

#include <stdexcept>
#include <string>

namespace ptta {

/// Base of every error thrown by the toolkit. `category()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { Config, DataIo, Numeric, Invariant };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::Config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::DataIo, what) {}
};

class MissingFileError : public IoError {
 public:
  using IoError::IoError;
};

class CorruptFileError : public IoError {
 public:
  using IoError::IoError;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(Category::Numeric, what) {}
};

/// Procrustes could not produce a unique rotation.
class DegenerateError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ZeroWeightError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

class TooFewPairsError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

class RankDeficientError : public DegenerateError {
 public:
  using DegenerateError::DegenerateError;
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what) : Error(Category::Invariant, what) {}
};

/// Argument outside an operation's domain (bad shape, non-positive voxel, ...).
class ArgumentError : public InvariantError {
 public:
  using InvariantError::InvariantError;
};

}  // namespace ptta
