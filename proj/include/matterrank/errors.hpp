#pragma once

#include <stdexcept>
#include <string>

namespace matterrank {

// Bad configuration or malformed input files. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Encoder/checkpoint/provider failures. CLI maps this to exit code 3.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Degenerate evaluation (e.g. overlap too small for a correlation). Exit 4.
class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace matterrank
