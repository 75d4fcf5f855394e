#pragma once

#include <stdexcept>
#include <string>

namespace pefsl {

// Contract/validation failures (bad spec values, shape mismatches, ...).
// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// File/stream problems. The CLI maps these to exit code 2.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace pefsl
