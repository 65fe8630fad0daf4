#pragma once

#include <stdexcept>
#include <string>

namespace mathbook {

/// Input did not satisfy a schema or domain invariant. Maps to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage could not complete (divergence, missing inputs, I/O). Maps to exit code 2.
class RuntimeAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mathbook
