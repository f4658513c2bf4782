#pragma once

#include <stdexcept>
#include <string>

namespace spgt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape algebra violations (matmul inner extents, reshape sizes, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

class TokenizationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents: bad magic, unsupported version, size mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Unreadable, unwritable or truncated files.
class IoError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during evaluation or training.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace spgt
