#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qdiag {

enum class ErrorCode {
  kUnknownLabel,
  kNoBoxedAnswer,
  kUnbalancedBraces,
  kDivisionByZero,
  kEmptyInput,
  kStepOutOfRange,
  kMissingGold,
  kDuplicateTranscript,
  kBaselineZero,
  kUniverseMismatch,
  kConfigError,
  kJudgeUnavailable,
  kAuthError,
  kParseFailure,
  kDuplicateJudge,
  kMissingBaseline,
  kNotReviewable,
  kEmptyPool,
  kAlreadyResolved,
  kUnknownItem,
  kMissingTranscript,
  kTargetExceedsPool,
  kIoFailure,
  kInvariantViolation,
  kStageOrderViolation,
  kStageFailed,
  kCorruptRun,
  kRunLocked,
  kInvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every recoverable failure raised by the library. The
/// code identifies the failure; the message carries human-readable context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace qdiag
