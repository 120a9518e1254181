#pragma once

#include <stdexcept>
#include <string>

namespace hrmsm {

// Invalid configuration, schema, or data supplied by the caller. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Estimation failure: singular systems, too few usable observations, unreliable
// replicates. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system and parsing problems. CLI exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hrmsm
