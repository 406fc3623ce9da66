#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gvi {

enum class ErrorCode {
  NotComposable,
  SingularMatrix,
  OutOfBranch,
  SingularTau,
  SingularHessian,
  StepFailure,
  NoConvergence,
  SingularJacobian,
  SingularRegularityMatrix,
  EmptyCertificate,
  InsufficientPoints,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotComposable: return "NotComposable";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::OutOfBranch: return "OutOfBranch";
    case ErrorCode::SingularTau: return "SingularTau";
    case ErrorCode::SingularHessian: return "SingularHessian";
    case ErrorCode::StepFailure: return "StepFailure";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::SingularRegularityMatrix: return "SingularRegularityMatrix";
    case ErrorCode::EmptyCertificate: return "EmptyCertificate";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for every numerical failure; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gvi
