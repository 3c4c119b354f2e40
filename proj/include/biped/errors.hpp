#pragma once

#include <stdexcept>
#include <string>

namespace biped {

/// Bad argument passed to a library call (non-finite time, wrong vector size, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A config file or bundle failed validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The integrator produced a non-finite state.
class SimulationDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reward evaluation saw a non-finite term.
class RewardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt, truncated or mismatched checkpoint / log file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// PPO update produced a non-finite loss; parameters were rolled back.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace biped
