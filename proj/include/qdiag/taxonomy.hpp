#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "qdiag/io.hpp"

namespace qdiag {

enum class ErrorCategory { kConceptual, kMethod, kExecution, kReasoning };

/// Leaf error labels. kNoError is a verdict value, not a member of any
/// category; it never appears in distributions.
enum class ErrorLabel {
  kConceptualMisunderstanding,
  kContextualOversight,
  kProceduralError,
  kFormulaRuleError,
  kComputationalError,
  kSymbolicManipulationError,
  kLogicalReasoningError,
  kNoError,
};

inline constexpr std::array<ErrorCategory, 4> kAllCategories = {
    ErrorCategory::kConceptual, ErrorCategory::kMethod, ErrorCategory::kExecution,
    ErrorCategory::kReasoning};

inline constexpr std::array<ErrorLabel, 7> kErrorLabels = {
    ErrorLabel::kConceptualMisunderstanding, ErrorLabel::kContextualOversight,
    ErrorLabel::kProceduralError,            ErrorLabel::kFormulaRuleError,
    ErrorLabel::kComputationalError,         ErrorLabel::kSymbolicManipulationError,
    ErrorLabel::kLogicalReasoningError};

inline constexpr std::array<ErrorLabel, 8> kAllLabels = {
    ErrorLabel::kConceptualMisunderstanding, ErrorLabel::kContextualOversight,
    ErrorLabel::kProceduralError,            ErrorLabel::kFormulaRuleError,
    ErrorLabel::kComputationalError,         ErrorLabel::kSymbolicManipulationError,
    ErrorLabel::kLogicalReasoningError,      ErrorLabel::kNoError};

constexpr std::optional<ErrorCategory> category_of(ErrorLabel label) {
  switch (label) {
    case ErrorLabel::kConceptualMisunderstanding:
    case ErrorLabel::kContextualOversight:
      return ErrorCategory::kConceptual;
    case ErrorLabel::kProceduralError:
    case ErrorLabel::kFormulaRuleError:
      return ErrorCategory::kMethod;
    case ErrorLabel::kComputationalError:
    case ErrorLabel::kSymbolicManipulationError:
      return ErrorCategory::kExecution;
    case ErrorLabel::kLogicalReasoningError:
      return ErrorCategory::kReasoning;
    case ErrorLabel::kNoError:
      return std::nullopt;
  }
  return std::nullopt;
}

/// Stable lower_snake_case key used in every file format.
std::string_view to_key(ErrorLabel label);
std::string_view to_key(ErrorCategory category);

/// Title-case prose name, e.g. "Computational Error".
std::string_view display_name(ErrorLabel label);
std::string_view display_name(ErrorCategory category);
std::string_view description(ErrorLabel label);

/// Case-insensitive, tolerant of whitespace, underscores, and hyphens.
/// "No Error" and "No Errors" map to kNoError. Throws UnknownLabel.
ErrorLabel parse_error_label(std::string_view text);
ErrorCategory parse_error_category(std::string_view text);

/// label key -> {category, display_name, description}; no_error carries a
/// null category.
Json taxonomy_json();

}  // namespace qdiag
