#pragma once

#include <stdexcept>
#include <string>

namespace segfuse {

// Filesystem / encoding problems. The CLI maps these to exit code 3;
// everything derived from std::invalid_argument (validation) maps to 2.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace segfuse
