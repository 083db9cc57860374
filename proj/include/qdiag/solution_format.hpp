#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qdiag/io.hpp"

namespace qdiag {

struct Step {
  int index = 0;
  std::string text;

  friend bool operator==(const Step&, const Step&) = default;
};

struct StepwiseSolution {
  std::string preamble;  // text before the first header; not addressable
  std::vector<Step> steps;
  std::string final_answer_raw;
  std::string raw_text;

  std::size_t step_count() const { return steps.size(); }
};

struct FormatViolation {
  enum class Reason { kNoStepHeaders, kNonContiguous, kEmptyStep, kMissingBoxedAnswer };

  Reason reason;
  std::string detail;
};

std::string_view to_string(FormatViolation::Reason reason);

/// Step-header template: a line prefix containing the placeholder "{k}",
/// e.g. "Step {k}:". Leading whitespace before the header is allowed.
class StepMarker {
 public:
  StepMarker() : StepMarker("Step {k}:") {}
  explicit StepMarker(std::string_view templ);

  /// If `line` begins with a header, returns the index and sets
  /// `body_offset` to the first character after the header.
  std::optional<int> match(std::string_view line, std::size_t& body_offset) const;
  std::string render(int index) const;
  const std::string& template_string() const { return template_; }

 private:
  std::string template_;
  std::string prefix_;
  std::string suffix_;
};

using ParsedSolution = std::variant<StepwiseSolution, FormatViolation>;

ParsedSolution parse_solution(std::string_view raw, const StepMarker& marker = StepMarker());

inline bool is_violation(const ParsedSolution& p) { return std::holds_alternative<FormatViolation>(p); }

/// Canonical rendering: preamble line (if any), then one "Step k: text" block
/// per step. parse_solution(render_solution(s)) reproduces s's steps.
std::string render_solution(const StepwiseSolution& sol, const StepMarker& marker = StepMarker());

/// Throws StepOutOfRange unless 1 <= k <= step_count.
const std::string& get_step(const StepwiseSolution& sol, int k);

enum class QuantMethod { kBf16, kAwqW4A16, kGptqW4A16 };

std::string_view to_key(QuantMethod method);
QuantMethod parse_quant_method(std::string_view text);

/// One model's raw output on one case.
struct Transcript {
  std::string case_id;
  std::string model_id;
  QuantMethod quant_method = QuantMethod::kBf16;
  std::string raw_output;
};

void to_json(Json& j, const Transcript& t);
void from_json(const Json& j, Transcript& t);

std::vector<Transcript> load_transcripts(const std::filesystem::path& path);

}  // namespace qdiag
