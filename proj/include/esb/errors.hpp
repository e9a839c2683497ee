#pragma once

#include <stdexcept>
#include <string>

namespace esb {

// Bad inputs: malformed files, parameters outside their domain, inconsistent
// dimensions. The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value, failed to bracket a root or ran
// out of budget where that is fatal. The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace esb
