#pragma once

#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nff {

/// Raised when an operation's preconditions (shapes, ranges, indices) do not hold.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by file and network IO.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  return shape_str(std::span<const std::size_t>(shape));
}

[[noreturn]] inline void contract_fail(const std::string& where, const std::string& what) {
  throw ContractError(where + ": " + what);
}

}  // namespace nff
