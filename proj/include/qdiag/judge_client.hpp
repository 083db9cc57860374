#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qdiag/error.hpp"
#include "qdiag/io.hpp"
#include "qdiag/solution_format.hpp"
#include "qdiag/taxonomy.hpp"

namespace qdiag {

struct JudgeSpec {
  std::string judge_id;
  std::string endpoint_url;  // scheme://host:port[/prefix]; "/v1/chat/completions" is appended
  std::string model_name;
  std::string api_key_env;   // empty: send no Authorization header
  bool is_baseline = false;
  int max_parallel = 4;
  double timeout_s = 60.0;
  int max_retries = 3;
  int backoff_base_ms = 1000;
};

void to_json(Json& j, const JudgeSpec& s);
void from_json(const Json& j, JudgeSpec& s);

class JudgePanel {
 public:
  JudgePanel() = default;
  /// Throws ConfigError unless ids are unique and exactly one judge is the baseline.
  explicit JudgePanel(std::vector<JudgeSpec> judges);

  const std::vector<JudgeSpec>& judges() const { return judges_; }
  const JudgeSpec& baseline() const;
  std::size_t size() const { return judges_.size(); }

 private:
  std::vector<JudgeSpec> judges_;
};

/// Accepts either {"judges": [...]} or a bare array of JudgeSpec objects.
JudgePanel panel_from_json(const Json& j);
Json panel_to_json(const JudgePanel& panel);

struct JudgeAssessment {
  std::string judge_id;
  std::string case_id;
  std::optional<int> first_error_step;  // absent <=> error_label == kNoError
  ErrorLabel error_label = ErrorLabel::kNoError;
  std::string explanation;
  double confidence = 0.5;
  std::string raw_response;
};

/// ParseFailure / StepOutOfRange raised while reading a judge reply; keeps
/// the reply text for the record.
class JudgeReplyError : public Error {
 public:
  JudgeReplyError(ErrorCode code, const std::string& message, std::string raw)
      : Error(code, message), raw_response_(std::move(raw)) {}
  const std::string& raw_response() const { return raw_response_; }

 private:
  std::string raw_response_;
};

struct AssessmentFields {
  std::optional<int> first_error_step;
  ErrorLabel error_label = ErrorLabel::kNoError;
  std::string explanation;
  double confidence = 0.5;
};

/// Reads the first JSON object embedded in a judge reply. Bare "No Error(s)"
/// replies become a no_error verdict with confidence 0.5. Throws
/// JudgeReplyError (ParseFailure or StepOutOfRange).
AssessmentFields parse_assessment(std::string_view raw, std::size_t step_count);

/// What a judge is shown about one failing case.
struct JudgeCaseView {
  std::string case_key;  // "<model_id>/<quant>/<case_id>"
  std::string problem_text;
  std::string gold_answer;
  std::optional<std::string> gold_solution;
  const StepwiseSolution* solution = nullptr;  // null: show raw_solution verbatim
  std::string raw_solution;
};

struct PromptOptions {
  bool include_gold_solution = false;
};

/// Deterministic for fixed inputs. Throws ConfigError on an empty taxonomy.
std::string render_judge_prompt(const JudgeCaseView& view, std::span<const ErrorLabel> taxonomy,
                                const PromptOptions& options = {});

/// OpenAI-compatible chat-completions body; temperature 0.
Json build_request_body(const JudgeSpec& spec, std::string_view prompt);

extern const char* const kJudgeSystemPrompt;

/// One chat-completions call with retry on transport errors, 429 and 5xx
/// (exponential backoff from backoff_base_ms, factor 2, with jitter).
/// Throws JudgeUnavailable, AuthError (401/403, no retry), ConfigError for a
/// missing credential, or JudgeReplyError.
JudgeAssessment request_assessment(const JudgeSpec& spec, const std::string& prompt,
                                   std::size_t step_count, const std::string& case_id = {});

/// Persisted result of asking one judge about one case: either an
/// assessment or a reply that could not be used.
struct JudgeRecord {
  std::string judge_id;
  std::string case_id;
  std::string model_id;
  QuantMethod quant_method = QuantMethod::kBf16;
  std::string prompt_hash;
  std::optional<JudgeAssessment> assessment;
  std::string failure;  // set when assessment is absent
  std::string raw_response;

  bool ok() const { return assessment.has_value(); }
};

void to_json(Json& j, const JudgeAssessment& a);
void from_json(const Json& j, JudgeAssessment& a);
void to_json(Json& j, const JudgeRecord& r);
void from_json(const Json& j, JudgeRecord& r);

/// On-disk cache keyed by (judge_id, case key, prompt hash); one file per
/// entry, each written by atomic rename.
class AssessmentCache {
 public:
  explicit AssessmentCache(std::filesystem::path dir);

  std::optional<JudgeRecord> get(const std::string& judge_id, const std::string& case_key,
                                 const std::string& prompt_hash) const;
  void put(const std::string& case_key, const JudgeRecord& record) const;

 private:
  std::filesystem::path entry_path(const std::string& judge_id, const std::string& case_key,
                                   const std::string& prompt_hash) const;
  std::filesystem::path dir_;
};

struct JudgeJob {
  std::string case_id;
  std::string model_id;
  QuantMethod quant_method = QuantMethod::kBf16;
  std::string prompt;
  std::size_t step_count = 0;

  std::string case_key() const;
};

struct PanelRunStats {
  std::size_t requests = 0;    // calls that reached request_assessment
  std::size_t cache_hits = 0;
};

/// Asks every judge about every job. Judges run concurrently, each bounded
/// by its max_parallel. Results are indexed [job][judge] in panel order.
/// Successful and unusable replies are cached; if any call ends in
/// JudgeUnavailable or AuthError the remaining calls still complete and
/// the first such error is rethrown afterwards.
std::vector<std::vector<JudgeRecord>> run_panel(const JudgePanel& panel, std::span<const JudgeJob> jobs,
                                                const AssessmentCache* cache, PanelRunStats* stats = nullptr);

}  // namespace qdiag
