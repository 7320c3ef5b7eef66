#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace livsic {

enum class ErrorCode {
  // configuration
  ConfigInvalid,
  // preconditions
  BracketOutOfRange,
  CapExceeded,
  NotRecurrent,
  NotDenseEnough,
  PreconditionViolated,
  NotContained,
  GapTooSmall,
  PocViolated,
  ExponentNonzero,
  NoStablePoint,
  // bound violations
  BoundViolated,
  ConeEscape,
  // numeric failures
  InversionDiverged,
  Singular,
  NotConverged,
  DimensionCollapse,
  TransformDiverged,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::BracketOutOfRange: return "BracketOutOfRange";
    case ErrorCode::CapExceeded: return "CapExceeded";
    case ErrorCode::NotRecurrent: return "NotRecurrent";
    case ErrorCode::NotDenseEnough: return "NotDenseEnough";
    case ErrorCode::PreconditionViolated: return "PreconditionViolated";
    case ErrorCode::NotContained: return "NotContained";
    case ErrorCode::GapTooSmall: return "GapTooSmall";
    case ErrorCode::PocViolated: return "PocViolated";
    case ErrorCode::ExponentNonzero: return "ExponentNonzero";
    case ErrorCode::NoStablePoint: return "NoStablePoint";
    case ErrorCode::BoundViolated: return "BoundViolated";
    case ErrorCode::ConeEscape: return "ConeEscape";
    case ErrorCode::InversionDiverged: return "InversionDiverged";
    case ErrorCode::Singular: return "Singular";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::DimensionCollapse: return "DimensionCollapse";
    case ErrorCode::TransformDiverged: return "TransformDiverged";
  }
  return "Unknown";
}

/// Process exit code for the lab CLI: 2 config, 3 precondition,
/// 4 bound violation, 5 numeric failure.
constexpr int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigInvalid:
      return 2;
    case ErrorCode::BracketOutOfRange:
    case ErrorCode::CapExceeded:
    case ErrorCode::NotRecurrent:
    case ErrorCode::NotDenseEnough:
    case ErrorCode::PreconditionViolated:
    case ErrorCode::NotContained:
    case ErrorCode::GapTooSmall:
    case ErrorCode::PocViolated:
    case ErrorCode::ExponentNonzero:
    case ErrorCode::NoStablePoint:
      return 3;
    case ErrorCode::BoundViolated:
    case ErrorCode::ConeEscape:
      return 4;
    case ErrorCode::InversionDiverged:
    case ErrorCode::Singular:
    case ErrorCode::NotConverged:
    case ErrorCode::DimensionCollapse:
    case ErrorCode::TransformDiverged:
      return 5;
  }
  return 5;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace livsic
