#pragma once

#include <stdexcept>
#include <string>

namespace cfmr {

// Bad arguments, shapes, or configuration. CLI exit code 1.
struct ValidationError : std::invalid_argument {
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Unreadable or corrupt data files. CLI exit code 2.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values during training. CLI exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cfmr
