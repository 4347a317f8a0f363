#pragma once

#include <stdexcept>
#include <string>

namespace vdecor {

// Bad input: shapes, ranges, malformed files. Maps to CLI exit code 1.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// A factorization failed or produced non-finite output. Maps to exit code 2.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string &msg) {
  if (!cond) {
    throw InvalidArgument(msg);
  }
}

} // namespace detail
} // namespace vdecor
