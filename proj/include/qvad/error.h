#pragma once

#include <stdexcept>
#include <string>

namespace qvad {

// Base of all library errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or missing input data, unreadable files, malformed serialized artifacts.
class DataError : public Error {
 public:
  using Error::Error;
};

// Shape mismatches and other API misuse.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad configuration values or command-line usage.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace qvad
