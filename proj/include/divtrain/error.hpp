#pragma once

#include <stdexcept>
#include <string>

namespace divtrain {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes incompatible with an operation.
struct ShapeError : Error {
  using Error::Error;
};

// Value outside an operation's documented domain (log of non-positive,
// label out of range, unsupported Hadamard order, ...).
struct ValueError : Error {
  using Error::Error;
};

// Model spec grammar violation; carries the offending token position.
struct ParseError : Error {
  ParseError(const std::string& msg, std::size_t pos)
      : Error(msg + " (at position " + std::to_string(pos) + ")"), position(pos) {}
  std::size_t position;
};

// File I/O and container-format failures (IDX, checkpoints).
struct IoError : Error {
  using Error::Error;
};

// Experiment-config schema violation; message carries the key path.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace divtrain
