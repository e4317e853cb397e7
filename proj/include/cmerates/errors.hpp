#pragma once

#include <stdexcept>
#include <string>

namespace cmerates {

// Caller violated a documented precondition.
class argument_error : public std::invalid_argument {
 public:
  explicit argument_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// A numerical routine failed (factorization, eigensolver, truncation budget).
// The message carries condition diagnostics where available.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Experiment configuration rejected; message starts with the offending field path.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace cmerates
