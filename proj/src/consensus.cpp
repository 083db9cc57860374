#include "qdiag/consensus.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "qdiag/error.hpp"

namespace qdiag {

std::string_view to_key(TieRule rule) {
  return rule == TieRule::kBaselineWinsIfTied ? "baseline_wins_if_tied" : "always_flag_ties";
}

TieRule parse_tie_rule(std::string_view text) {
  if (text == "baseline_wins_if_tied") return TieRule::kBaselineWinsIfTied;
  if (text == "always_flag_ties") return TieRule::kAlwaysFlagTies;
  throw Error(ErrorCode::kConfigError, fmt::format("unknown tie_rule '{}'", text));
}

void ConsensusPolicy::validate(std::size_t panel_size) const {
  if (quorum < 1 || static_cast<std::size_t>(quorum) > panel_size) {
    throw Error(ErrorCode::kConfigError,
                fmt::format("quorum {} outside [1, {}]", quorum, panel_size));
  }
}

void to_json(Json& j, const ConsensusPolicy& p) {
  j = Json{{"quorum", p.quorum}, {"baseline_judge_id", p.baseline_judge_id}, {"tie_rule", to_key(p.tie_rule)}};
}

void from_json(const Json& j, ConsensusPolicy& p) {
  p.quorum = j.value("quorum", 4);
  p.baseline_judge_id = j.value("baseline_judge_id", "");
  p.tie_rule = parse_tie_rule(j.value("tie_rule", "baseline_wins_if_tied"));
}

TallyResult tally_votes(std::span<const JudgeAssessment> assessments) {
  if (assessments.empty()) throw Error(ErrorCode::kInvalidArgument, "no assessments to tally");
  TallyResult r;
  std::set<std::string> seen;
  for (const auto& a : assessments) {
    if (!seen.insert(a.judge_id).second) throw Error(ErrorCode::kDuplicateJudge, a.judge_id);
    ++r.tally[a.error_label];
  }
  r.received = static_cast<int>(assessments.size());
  std::vector<int> counts;
  for (const auto& [label, n] : r.tally) {
    counts.push_back(n);
    r.plurality_count = std::max(r.plurality_count, n);
  }
  for (const auto& [label, n] : r.tally) {
    if (n == r.plurality_count) r.plurality.insert(label);
  }
  std::sort(counts.rbegin(), counts.rend());
  r.vote_margin = counts.size() > 1 ? counts[0] - counts[1] : counts[0];
  return r;
}

PolicyDecision apply_policy(const TallyResult& tally, std::optional<ErrorLabel> baseline_label,
                            const ConsensusPolicy& policy) {
  if (!baseline_label) throw Error(ErrorCode::kMissingBaseline, policy.baseline_judge_id);
  std::optional<ErrorLabel> accepted;
  if (tally.unique_plurality()) {
    ErrorLabel top = *tally.plurality.begin();
    if (top == *baseline_label || tally.plurality_count >= policy.quorum) accepted = top;
  } else if (!tally.plurality.empty() && policy.tie_rule == TieRule::kBaselineWinsIfTied &&
             tally.plurality.contains(*baseline_label)) {
    accepted = *baseline_label;
  }
  if (!accepted) return {PolicyDecision::Kind::kFlag, std::nullopt};
  if (*accepted == ErrorLabel::kNoError) return {PolicyDecision::Kind::kRescoreRequest, accepted};
  return {PolicyDecision::Kind::kAccept, accepted};
}

std::string_view to_key(OutcomeStatus status) {
  switch (status) {
    case OutcomeStatus::kAccepted: return "accepted";
    case OutcomeStatus::kFlagged: return "flagged";
    case OutcomeStatus::kRescoredCorrect: return "rescored_correct";
    case OutcomeStatus::kDismissed: return "dismissed";
  }
  return "";
}

OutcomeStatus parse_outcome_status(std::string_view text) {
  for (auto s : {OutcomeStatus::kAccepted, OutcomeStatus::kFlagged, OutcomeStatus::kRescoredCorrect,
                 OutcomeStatus::kDismissed}) {
    if (text == to_key(s)) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown outcome status '{}'", text));
}

std::string ConsensusOutcome::case_key() const {
  return fmt::format("{}/{}/{}", model_id, to_key(quant_method), case_id);
}

void to_json(Json& j, const HumanVerdict& v) {
  j = Json{{"label", to_key(v.label)},
           {"step", v.step ? Json(*v.step) : Json(nullptr)},
           {"reviewer_id", v.reviewer_id},
           {"timestamp", v.timestamp}};
}

void from_json(const Json& j, HumanVerdict& v) {
  v.label = parse_error_label(j.at("label").get<std::string>());
  v.step = (!j.contains("step") || j.at("step").is_null()) ? std::nullopt
                                                          : std::optional<int>(j.at("step").get<int>());
  v.reviewer_id = j.value("reviewer_id", "");
  v.timestamp = j.value("timestamp", "");
}

void to_json(Json& j, const ConsensusOutcome& o) {
  Json tally = Json::object();
  for (const auto& [label, n] : o.tally) tally[std::string(to_key(label))] = n;
  Json plurality = Json::array();
  for (ErrorLabel l : o.plurality_labels) plurality.push_back(to_key(l));
  j = Json{{"case_id", o.case_id},
           {"model_id", o.model_id},
           {"quant_method", to_key(o.quant_method)},
           {"tally", tally},
           {"plurality_labels", plurality},
           {"final_label", o.final_label ? Json(std::string(to_key(*o.final_label))) : Json(nullptr)},
           {"status", to_key(o.status)},
           {"consensus_step", o.consensus_step ? Json(*o.consensus_step) : Json(nullptr)},
           {"vote_margin", o.vote_margin},
           {"assessments_received", o.assessments_received},
           {"note", o.note},
           {"audit_sampled", o.audit_sampled},
           {"human_verdict", o.human_verdict ? Json(*o.human_verdict) : Json(nullptr)}};
}

void from_json(const Json& j, ConsensusOutcome& o) {
  o.case_id = j.at("case_id").get<std::string>();
  o.model_id = j.at("model_id").get<std::string>();
  o.quant_method = parse_quant_method(j.at("quant_method").get<std::string>());
  o.tally.clear();
  for (const auto& [k, v] : j.at("tally").items()) o.tally[parse_error_label(k)] = v.get<int>();
  o.plurality_labels.clear();
  for (const auto& l : j.at("plurality_labels")) o.plurality_labels.insert(parse_error_label(l.get<std::string>()));
  o.final_label = j.at("final_label").is_null()
                      ? std::nullopt
                      : std::optional<ErrorLabel>(parse_error_label(j.at("final_label").get<std::string>()));
  o.status = parse_outcome_status(j.at("status").get<std::string>());
  o.consensus_step = j.at("consensus_step").is_null() ? std::nullopt
                                                      : std::optional<int>(j.at("consensus_step").get<int>());
  o.vote_margin = j.value("vote_margin", 0);
  o.assessments_received = j.value("assessments_received", 0);
  o.note = j.value("note", "");
  o.audit_sampled = j.value("audit_sampled", false);
  o.human_verdict = (!j.contains("human_verdict") || j.at("human_verdict").is_null())
                        ? std::nullopt
                        : std::optional<HumanVerdict>(j.at("human_verdict").get<HumanVerdict>());
}

std::optional<int> consensus_step(std::span<const JudgeAssessment> assessments, ErrorLabel label) {
  std::map<int, std::pair<int, double>> by_step;  // step -> (votes, confidence sum)
  for (const auto& a : assessments) {
    if (a.error_label != label || !a.first_error_step) continue;
    auto& [votes, conf] = by_step[*a.first_error_step];
    ++votes;
    conf += a.confidence;
  }
  std::optional<int> best;
  std::pair<int, double> best_key{-1, -1.0};
  // Ascending step order, so strict comparison keeps the smaller step on full ties.
  for (const auto& [step, key] : by_step) {
    if (key.first > best_key.first || (key.first == best_key.first && key.second > best_key.second)) {
      best = step;
      best_key = key;
    }
  }
  return best;
}

ConsensusOutcome decide_case(const std::string& case_id, const std::string& model_id, QuantMethod quant,
                             std::span<const JudgeRecord> records, const ConsensusPolicy& policy,
                             const std::function<bool()>& answer_is_correct) {
  ConsensusOutcome out;
  out.case_id = case_id;
  out.model_id = model_id;
  out.quant_method = quant;

  std::vector<JudgeAssessment> usable;
  std::optional<ErrorLabel> baseline_label;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    usable.push_back(*r.assessment);
    if (r.judge_id == policy.baseline_judge_id) baseline_label = r.assessment->error_label;
  }
  if (usable.empty()) {
    out.note = "no usable judge assessments";
    return out;
  }
  TallyResult t = tally_votes(usable);
  out.tally = t.tally;
  out.plurality_labels = t.plurality;
  out.vote_margin = t.vote_margin;
  out.assessments_received = t.received;
  if (!baseline_label) {
    out.note = "baseline judge reply unusable";
    return out;
  }

  PolicyDecision d = apply_policy(t, baseline_label, policy);
  switch (d.kind) {
    case PolicyDecision::Kind::kFlag:
      out.status = OutcomeStatus::kFlagged;
      break;
    case PolicyDecision::Kind::kAccept:
      out.status = OutcomeStatus::kAccepted;
      out.final_label = d.label;
      out.consensus_step = consensus_step(usable, *d.label);
      break;
    case PolicyDecision::Kind::kRescoreRequest:
      if (answer_is_correct && answer_is_correct()) {
        out.status = OutcomeStatus::kRescoredCorrect;
        out.final_label = ErrorLabel::kNoError;
      } else {
        out.status = OutcomeStatus::kFlagged;
        out.note = "panel says no_error but the equivalence recheck disagrees";
      }
      break;
  }
  return out;
}

ConsensusOutcome resolve_with_human(const ConsensusOutcome& outcome, const HumanVerdict& verdict,
                                    bool answer_is_correct) {
  if (outcome.human_verdict && *outcome.human_verdict == verdict) return outcome;
  bool reviewable = outcome.status == OutcomeStatus::kFlagged || outcome.audit_sampled ||
                    outcome.human_verdict.has_value();
  if (!reviewable) {
    throw Error(ErrorCode::kNotReviewable,
                fmt::format("{} is {} and was not audit-sampled", outcome.case_key(), to_key(outcome.status)));
  }
  ConsensusOutcome out = outcome;
  out.human_verdict = verdict;
  out.final_label = verdict.label;
  if (verdict.label == ErrorLabel::kNoError) {
    out.status = answer_is_correct ? OutcomeStatus::kRescoredCorrect : OutcomeStatus::kDismissed;
    out.consensus_step.reset();
  } else {
    out.status = OutcomeStatus::kAccepted;
    out.consensus_step = verdict.step;
  }
  return out;
}

}  // namespace qdiag
