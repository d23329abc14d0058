// Copyright 2026 The rme Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace rme {

enum class ErrorKind {
  dimension,
  numeric,
  config,
  tape,
  contract,
  degenerate,
  range,
  io,
};

constexpr const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::config: return "config";
    case ErrorKind::tape: return "tape";
    case ErrorKind::contract: return "contract";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::range: return "range";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can emit a parsable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace rme
