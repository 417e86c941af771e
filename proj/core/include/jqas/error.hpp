#pragma once

#include <stdexcept>
#include <string>

namespace jqas {

// Exit-code families used by the CLI: config errors (2), data errors (3),
// everything else is a runtime failure (4).

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jqas
