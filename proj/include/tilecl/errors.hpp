// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tilecl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions disagree. Message carries both dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration (divisibility, ranges, unknown names).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Out-of-range argument to a pure function.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Ring message missing, out of order, or of the wrong kind.
class ProtocolError : public Error {
 public:
  ProtocolError(std::size_t round, std::size_t worker, const std::string& what)
      : Error("protocol error at round " + std::to_string(round) + ", worker " +
              std::to_string(worker) + ": " + what),
        round_(round),
        worker_(worker) {}

  std::size_t round() const noexcept { return round_; }
  std::size_t worker() const noexcept { return worker_; }

 private:
  std::size_t round_;
  std::size_t worker_;
};

// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Misuse of the allocation tracker (unbalanced scopes).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Tracked loss buffers would exceed the configured ceiling, or the host
// allocator failed.
class MemoryBudgetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tilecl
