// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mmtlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or precondition violation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached a tensor, a gradient, or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed command line or configuration; maps to CLI exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmtlab
