// SPDX-License-Identifier: Apache-2.0
#include "megaagent/error.hpp"

namespace megaagent {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::UnknownRecipient: return "UnknownRecipient";
    case ErrorCode::RoutingForbidden: return "RoutingForbidden";
    case ErrorCode::FunctionLoopExceeded: return "FunctionLoopExceeded";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::UnknownBaseHash: return "UnknownBaseHash";
    case ErrorCode::StaleReport: return "StaleReport";
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::StageClosed: return "StageClosed";
    case ErrorCode::SpawnRefused: return "SpawnRefused";
    case ErrorCode::EmptyDecomposition: return "EmptyDecomposition";
    case ErrorCode::EscalationAtRoot: return "EscalationAtRoot";
    case ErrorCode::DeadlockSuspected: return "DeadlockSuspected";
    case ErrorCode::MalformedTag: return "MalformedTag";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

}  // namespace megaagent
