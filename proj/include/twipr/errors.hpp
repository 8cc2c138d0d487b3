#pragma once

#include <stdexcept>
#include <string>

namespace twipr {

// Malformed or out-of-range configuration (scenario files, parameters, weights).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (wrong cycle order, dilation of a
// lost packet, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// The simulated robot left the region where the model is meaningful.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twipr
