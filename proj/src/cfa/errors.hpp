#pragma once

#include <stdexcept>
#include <string>

namespace cfa {

// Error taxonomy. Each maps to one process exit code / C status code:
// config 2, training 3, evaluation 4. ContractError and DataError are
// reported under whichever command surfaced them.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class TrainingFault : public std::runtime_error {
 public:
  explicit TrainingFault(const std::string& msg) : std::runtime_error(msg) {}
};

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace cfa
