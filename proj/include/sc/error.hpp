#pragma once

#include <stdexcept>
#include <string>

namespace sc {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension / rank mismatches. Message names the offending axes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf detected in an op output or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset / checkpoint / fixture files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Bad configuration values or unparseable config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sc
