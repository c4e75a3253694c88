#pragma once

#include <stdexcept>
#include <string>

namespace hyperfscil {

// Exit-code contract of the CLI: 0 ok, 2 config, 3 data, 4 numerical.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hyperfscil
