#pragma once

#include <stdexcept>
#include <string>

namespace depthcal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A precondition on an argument was violated (sizes, ranges, counts).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The input is numerically degenerate (collinear points, parallel planes, singular systems).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

/// An iterative solver stopped without reaching its acceptance threshold.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed or written.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace depthcal
