// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace megaagent {

enum class ErrorCode {
  BackendUnavailable,
  UnknownRecipient,
  RoutingForbidden,
  FunctionLoopExceeded,
  ValidationFailed,
  NotFound,
  UnknownBaseHash,
  StaleReport,
  InvalidPath,
  EmptyText,
  StageClosed,
  SpawnRefused,
  EmptyDecomposition,
  EscalationAtRoot,
  DeadlockSuspected,
  MalformedTag,
  InvalidConfig,
  InvariantViolation,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-checkable code. Recoverable conditions that
/// belong to the domain (conflicts, failed tool calls) are values, not
/// exceptions; this is for contract violations and hard failures.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace megaagent
