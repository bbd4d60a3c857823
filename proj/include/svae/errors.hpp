#pragma once

#include <stdexcept>
#include <string>

namespace svae {

/// Invalid configuration or shape contract. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value or non-positive factor diagonal. CLI exit code 1.
class NumericFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse (wrong call order, non-scalar loss, missing gradient).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Checkpoint or binary block whose header or checksum does not validate.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace svae
