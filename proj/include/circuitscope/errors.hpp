#pragma once

#include <stdexcept>
#include <string>

namespace circuitscope {

// Exit-code contract of the CLI: 0 success, 2 config error, 3 dependency
// error, 4 calibration failure. Anything else that escapes is a plain 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DependencyError*>(&e)) return 3;
  if (dynamic_cast<const CalibrationError*>(&e)) return 4;
  return 1;
}

}  // namespace circuitscope
