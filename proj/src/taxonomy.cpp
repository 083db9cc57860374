#include "qdiag/taxonomy.hpp"

#include <cctype>

#include "qdiag/error.hpp"

namespace qdiag {

std::string_view to_key(ErrorLabel label) {
  switch (label) {
    case ErrorLabel::kConceptualMisunderstanding: return "conceptual_misunderstanding";
    case ErrorLabel::kContextualOversight: return "contextual_oversight";
    case ErrorLabel::kProceduralError: return "procedural_error";
    case ErrorLabel::kFormulaRuleError: return "formula_rule_error";
    case ErrorLabel::kComputationalError: return "computational_error";
    case ErrorLabel::kSymbolicManipulationError: return "symbolic_manipulation_error";
    case ErrorLabel::kLogicalReasoningError: return "logical_reasoning_error";
    case ErrorLabel::kNoError: return "no_error";
  }
  return "";
}

std::string_view to_key(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConceptual: return "conceptual";
    case ErrorCategory::kMethod: return "method";
    case ErrorCategory::kExecution: return "execution";
    case ErrorCategory::kReasoning: return "reasoning";
  }
  return "";
}

std::string_view display_name(ErrorLabel label) {
  switch (label) {
    case ErrorLabel::kConceptualMisunderstanding: return "Conceptual Misunderstanding";
    case ErrorLabel::kContextualOversight: return "Contextual Oversight";
    case ErrorLabel::kProceduralError: return "Procedural Error";
    case ErrorLabel::kFormulaRuleError: return "Formula Rule Error";
    case ErrorLabel::kComputationalError: return "Computational Error";
    case ErrorLabel::kSymbolicManipulationError: return "Symbolic Manipulation Error";
    case ErrorLabel::kLogicalReasoningError: return "Logical Reasoning Error";
    case ErrorLabel::kNoError: return "No Error";
  }
  return "";
}

std::string_view display_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConceptual: return "Conceptual Errors";
    case ErrorCategory::kMethod: return "Method Errors";
    case ErrorCategory::kExecution: return "Execution Errors";
    case ErrorCategory::kReasoning: return "Reasoning Errors";
  }
  return "";
}

std::string_view description(ErrorLabel label) {
  switch (label) {
    case ErrorLabel::kConceptualMisunderstanding:
      return "The solution misreads a core concept or principle, so the problem is set up "
             "wrongly or attacked with an unsuitable approach.";
    case ErrorLabel::kContextualOversight:
      return "The solution ignores a constraint stated or implied by the problem (domain "
             "limits, geometric or physical conditions) that changes the result.";
    case ErrorLabel::kProceduralError:
      return "A standard procedure is carried out incorrectly or incompletely, for example a "
             "required step of an algorithm is skipped.";
    case ErrorLabel::kFormulaRuleError:
      return "A formula, theorem, or rule is misstated or applied where it does not hold.";
    case ErrorLabel::kComputationalError:
      return "An arithmetic or algebraic calculation is wrong: a sum, product, expansion, "
             "factorization, or sign.";
    case ErrorLabel::kSymbolicManipulationError:
      return "Symbols or expressions are mishandled: variables confused or relabeled, or a "
             "symbolic transformation misread.";
    case ErrorLabel::kLogicalReasoningError:
      return "The chain of inference breaks: a conclusion does not follow from the previous "
             "steps or a needed case is omitted.";
    case ErrorLabel::kNoError:
      return "The final answer is actually correct; the mismatch is only in how it is written.";
  }
  return "";
}

namespace {

// Lowercases and collapses runs of whitespace, '_' and '-' into a single '_'.
std::string normalize_key(std::string_view text) {
  std::string out;
  bool pending_sep = false;
  for (char raw : text) {
    auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c) || c == '_' || c == '-') {
      pending_sep = !out.empty();
      continue;
    }
    if (c == '"' || c == '\'' || c == '.' || c == '`') continue;
    if (pending_sep) out += '_';
    pending_sep = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

}  // namespace

ErrorLabel parse_error_label(std::string_view text) {
  std::string key = normalize_key(text);
  for (ErrorLabel label : kAllLabels) {
    if (key == to_key(label)) return label;
  }
  if (key == "no_errors" || key == "none") return ErrorLabel::kNoError;
  throw Error(ErrorCode::kUnknownLabel, std::string(text));
}

ErrorCategory parse_error_category(std::string_view text) {
  std::string key = normalize_key(text);
  for (ErrorCategory cat : kAllCategories) {
    if (key == to_key(cat) || key == std::string(to_key(cat)) + "_errors" ||
        key == std::string(to_key(cat)) + "_error") {
      return cat;
    }
  }
  throw Error(ErrorCode::kUnknownLabel, std::string(text));
}

Json taxonomy_json() {
  Json doc = Json::object();
  for (ErrorLabel label : kAllLabels) {
    auto cat = category_of(label);
    doc[std::string(to_key(label))] = {
        {"category", cat ? Json(std::string(to_key(*cat))) : Json(nullptr)},
        {"display_name", display_name(label)},
        {"description", description(label)},
    };
  }
  return doc;
}

}  // namespace qdiag
