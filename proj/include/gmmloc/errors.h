#pragma once

#include <stdexcept>
#include <string>

namespace gmmloc {

// Invalid input data: bad covariances, dangling edges, missing gauge, ...
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text/binary input. line() is 1-based, 0 when not applicable.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class BehindCameraError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LowParallaxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gmmloc
