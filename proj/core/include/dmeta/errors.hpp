#pragma once

#include <stdexcept>
#include <string>

namespace dmeta {

/// Non-finite values encountered in gradients, losses or parameters.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem or serialization failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dmeta
