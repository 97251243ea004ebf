#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace claw {

// Tensor shape / dimension mismatch; message names the offending shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary input (IDX files, snapshot files); message carries a byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad experiment configuration; message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem write/read failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite training loss; carries the global step at which it appeared.
class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(std::size_t step, const std::string& what_arg)
      : std::runtime_error(what_arg), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace claw
