#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>

#include "qdiag/judge_client.hpp"
#include "qdiag/taxonomy.hpp"

namespace qdiag {

enum class TieRule { kBaselineWinsIfTied, kAlwaysFlagTies };

std::string_view to_key(TieRule rule);
TieRule parse_tie_rule(std::string_view text);

struct ConsensusPolicy {
  int quorum = 4;  // counted over the nominal panel, baseline included
  std::string baseline_judge_id;
  TieRule tie_rule = TieRule::kBaselineWinsIfTied;

  /// Throws ConfigError unless 1 <= quorum <= panel_size.
  void validate(std::size_t panel_size) const;
};

void to_json(Json& j, const ConsensusPolicy& p);
void from_json(const Json& j, ConsensusPolicy& p);

struct TallyResult {
  std::map<ErrorLabel, int> tally;
  std::set<ErrorLabel> plurality;
  int received = 0;
  int plurality_count = 0;
  int vote_margin = 0;  // plurality count minus runner-up count; 0 on ties

  bool unique_plurality() const { return plurality.size() == 1; }
};

/// Throws DuplicateJudge, or InvalidArgument for an empty list.
TallyResult tally_votes(std::span<const JudgeAssessment> assessments);

struct PolicyDecision {
  enum class Kind { kAccept, kFlag, kRescoreRequest };

  Kind kind = Kind::kFlag;
  std::optional<ErrorLabel> label;  // set for kAccept and kRescoreRequest
};

/// Baseline-versus-majority rule:
///  1. unique plurality equal to the baseline label -> accept;
///  2. unique plurality with count >= quorum -> accept the plurality;
///  3. tied plurality: accept the baseline label if it is among the tied
///     labels and the tie rule allows it, else flag;
///  4. otherwise flag.
/// An accepted no_error becomes a rescore request. Throws MissingBaseline
/// when baseline_label is absent.
PolicyDecision apply_policy(const TallyResult& tally, std::optional<ErrorLabel> baseline_label,
                            const ConsensusPolicy& policy);

enum class OutcomeStatus { kAccepted, kFlagged, kRescoredCorrect, kDismissed };

std::string_view to_key(OutcomeStatus status);
OutcomeStatus parse_outcome_status(std::string_view text);

struct HumanVerdict {
  ErrorLabel label = ErrorLabel::kNoError;
  std::optional<int> step;
  std::string reviewer_id;
  std::string timestamp;

  friend bool operator==(const HumanVerdict&, const HumanVerdict&) = default;
};

struct ConsensusOutcome {
  std::string case_id;
  std::string model_id;
  QuantMethod quant_method = QuantMethod::kBf16;
  std::map<ErrorLabel, int> tally;
  std::set<ErrorLabel> plurality_labels;
  std::optional<ErrorLabel> final_label;
  OutcomeStatus status = OutcomeStatus::kFlagged;
  std::optional<int> consensus_step;
  int vote_margin = 0;
  int assessments_received = 0;
  std::string note;
  bool audit_sampled = false;
  std::optional<HumanVerdict> human_verdict;

  std::string case_key() const;
};

void to_json(Json& j, const HumanVerdict& v);
void from_json(const Json& j, HumanVerdict& v);
void to_json(Json& j, const ConsensusOutcome& o);
void from_json(const Json& j, ConsensusOutcome& o);

/// Most common first_error_step among assessments voting for `label`; ties
/// go to the larger summed confidence, then the smaller step.
std::optional<int> consensus_step(std::span<const JudgeAssessment> assessments, ErrorLabel label);

/// Decides one case from the panel's records. Unusable replies are dropped
/// from the tally without lowering the quorum. A rescore request calls
/// `answer_is_correct` (the equivalence recheck): true gives
/// rescored_correct, false routes the case to human review. A case whose
/// baseline reply is unusable is flagged.
ConsensusOutcome decide_case(const std::string& case_id, const std::string& model_id, QuantMethod quant,
                             std::span<const JudgeRecord> records, const ConsensusPolicy& policy,
                             const std::function<bool()>& answer_is_correct);

/// Applies a reviewer's verdict. Allowed for flagged outcomes, audit-sampled
/// outcomes, and outcomes already carrying a human verdict; re-applying the
/// recorded verdict is a no-op. A human no_error becomes rescored_correct
/// when `answer_is_correct` holds and dismissed otherwise. Throws
/// NotReviewable.
ConsensusOutcome resolve_with_human(const ConsensusOutcome& outcome, const HumanVerdict& verdict,
                                    bool answer_is_correct);

}  // namespace qdiag
