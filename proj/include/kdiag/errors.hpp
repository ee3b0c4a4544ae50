// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kdiag {

// Coarse failure categories; the C API maps these onto status codes and the
// CLI maps them onto exit codes (config -> 1, backend -> 2).
enum class ErrorKind {
  Config,
  Backend,
  Io,
  Invalid,
  State,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_config(std::string msg) {
  throw Error(ErrorKind::Config, std::move(msg));
}
[[noreturn]] inline void throw_backend(std::string msg) {
  throw Error(ErrorKind::Backend, std::move(msg));
}
[[noreturn]] inline void throw_io(std::string msg) {
  throw Error(ErrorKind::Io, std::move(msg));
}
[[noreturn]] inline void throw_invalid(std::string msg) {
  throw Error(ErrorKind::Invalid, std::move(msg));
}
[[noreturn]] inline void throw_state(std::string msg) {
  throw Error(ErrorKind::State, std::move(msg));
}

}  // namespace kdiag
