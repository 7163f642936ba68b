#pragma once

#include <stdexcept>
#include <string>

namespace bhfl {

// Invalid configuration: bad shapes, unknown keys, illegal option combinations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. a stale activation cache or an out-of-range stage index.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values or divergence detected during a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bhfl
