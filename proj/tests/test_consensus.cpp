#include <gtest/gtest.h>

#include <random>

#include "consensus_check.hpp"
#include "qdiag/consensus.hpp"
#include "qdiag/error.hpp"

namespace qdiag {
namespace {

using L = ErrorLabel;
using check::panel_of;
using check::disagreements;

ConsensusPolicy default_policy() { return {4, "j0", TieRule::kBaselineWinsIfTied}; }

TEST(Tally, Counts) {
  auto t = tally_votes(panel_of({L::kComputationalError, L::kComputationalError, L::kComputationalError,
                                 L::kComputationalError, L::kComputationalError}));
  EXPECT_EQ(t.tally.at(L::kComputationalError), 5);
  EXPECT_EQ(t.plurality, std::set<L>{L::kComputationalError});
  EXPECT_EQ(t.vote_margin, 5);

  auto tie = tally_votes(panel_of({L::kProceduralError, L::kProceduralError, L::kFormulaRuleError,
                                   L::kFormulaRuleError, L::kContextualOversight}));
  EXPECT_EQ(tie.plurality, (std::set<L>{L::kProceduralError, L::kFormulaRuleError}));
  EXPECT_EQ(tie.vote_margin, 0);

  auto dup = panel_of({L::kProceduralError, L::kProceduralError});
  dup[1].judge_id = "j0";
  try {
    tally_votes(dup);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateJudge);
  }
}

TEST(Policy, BaselineOutvotedBelowQuorumIsFlagged) {
  auto votes = panel_of({L::kConceptualMisunderstanding, L::kProceduralError, L::kProceduralError,
                         L::kProceduralError, L::kConceptualMisunderstanding});
  auto d = apply_policy(tally_votes(votes), L::kConceptualMisunderstanding, default_policy());
  EXPECT_EQ(d.kind, PolicyDecision::Kind::kFlag);
}

TEST(Policy, QuorumOverridesBaseline) {
  auto votes = panel_of({L::kLogicalReasoningError, L::kComputationalError, L::kComputationalError,
                         L::kComputationalError, L::kComputationalError});
  auto d = apply_policy(tally_votes(votes), L::kLogicalReasoningError, default_policy());
  EXPECT_EQ(d.kind, PolicyDecision::Kind::kAccept);
  EXPECT_EQ(d.label, L::kComputationalError);
}

TEST(Policy, MissingBaseline) {
  try {
    apply_policy(tally_votes(panel_of({L::kProceduralError})), std::nullopt, default_policy());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingBaseline);
  }
}

TEST(Policy, ValidateQuorum) {
  ConsensusPolicy p = default_policy();
  EXPECT_NO_THROW(p.validate(5));
  p.quorum = 6;
  EXPECT_THROW(p.validate(5), Error);
  p.quorum = 0;
  EXPECT_THROW(p.validate(5), Error);
}

TEST(Policy, AgreesWithOracleExhaustively) {
  EXPECT_EQ(disagreements(default_policy(), 0), 0);
  std::mt19937 rng(11);
  for (int k = 0; k < 3; ++k) {
    std::size_t b = rng() % 5;
    ConsensusPolicy p{1 + static_cast<int>(rng() % 5), "j" + std::to_string(b),
                      rng() % 2 ? TieRule::kBaselineWinsIfTied : TieRule::kAlwaysFlagTies};
    EXPECT_EQ(disagreements(p, b), 0) << "quorum " << p.quorum;
  }
}

TEST(Policy, UnanimousNeverFlagged) {
  for (L l : kAllLabels) {
    for (int q = 1; q <= 5; ++q) {
      for (auto rule : {TieRule::kBaselineWinsIfTied, TieRule::kAlwaysFlagTies}) {
        auto d = apply_policy(tally_votes(panel_of({l, l, l, l, l})), l, {q, "j0", rule});
        EXPECT_NE(d.kind, PolicyDecision::Kind::kFlag);
      }
    }
  }
}

std::vector<JudgeRecord> records_of(const std::vector<JudgeAssessment>& as) {
  std::vector<JudgeRecord> out;
  for (const auto& a : as) {
    JudgeRecord r;
    r.judge_id = a.judge_id;
    r.case_id = a.case_id;
    r.assessment = a;
    out.push_back(r);
  }
  return out;
}

TEST(DecideCase, AllNoErrorIsRescoredWhenRecheckPasses) {
  auto recs = records_of(panel_of({L::kNoError, L::kNoError, L::kNoError, L::kNoError, L::kNoError}));
  auto o = decide_case("3812", "m", QuantMethod::kAwqW4A16, recs, default_policy(), [] { return true; });
  EXPECT_EQ(o.status, OutcomeStatus::kRescoredCorrect);
  EXPECT_EQ(o.final_label, L::kNoError);

  auto f = decide_case("3812", "m", QuantMethod::kAwqW4A16, recs, default_policy(), [] { return false; });
  EXPECT_EQ(f.status, OutcomeStatus::kFlagged);
  EXPECT_FALSE(f.final_label.has_value());
}

TEST(DecideCase, ParseFailureDroppedQuorumKept) {
  auto recs = records_of(panel_of({L::kLogicalReasoningError, L::kComputationalError, L::kComputationalError,
                                   L::kComputationalError, L::kComputationalError}));
  recs[4].assessment.reset();
  recs[4].failure = "ParseFailure";
  auto o = decide_case("1", "m", QuantMethod::kAwqW4A16, recs, default_policy(), nullptr);
  EXPECT_EQ(o.assessments_received, 4);
  int sum = 0;
  for (auto& [l, n] : o.tally) sum += n;
  EXPECT_EQ(sum, 4);
  // 3 computational votes < quorum 4, baseline disagrees.
  EXPECT_EQ(o.status, OutcomeStatus::kFlagged);

  recs[0].assessment.reset();
  auto nb = decide_case("1", "m", QuantMethod::kAwqW4A16, recs, default_policy(), nullptr);
  EXPECT_EQ(nb.status, OutcomeStatus::kFlagged);
  EXPECT_EQ(nb.note, "baseline judge reply unusable");
}

TEST(DecideCase, ConsensusStep) {
  auto as = panel_of({L::kComputationalError, L::kComputationalError, L::kComputationalError,
                      L::kComputationalError, L::kProceduralError},
                     {3, 2, 3, 2, 1});
  EXPECT_EQ(consensus_step(as, L::kComputationalError), 2);  // tie 2 vs 3 -> smaller
  as[0].confidence = 0.9;
  as[2].confidence = 0.9;
  EXPECT_EQ(consensus_step(as, L::kComputationalError), 3);  // confidence breaks the step tie
  auto o = decide_case("1", "m", QuantMethod::kAwqW4A16, records_of(as), default_policy(), nullptr);
  EXPECT_EQ(o.status, OutcomeStatus::kAccepted);
  EXPECT_EQ(o.consensus_step, 3);
  EXPECT_EQ(o.vote_margin, 3);
}

TEST(Human, ResolveFlagged) {
  auto recs = records_of(panel_of({L::kConceptualMisunderstanding, L::kProceduralError, L::kProceduralError,
                                   L::kProceduralError, L::kConceptualMisunderstanding}));
  auto o = decide_case("342", "m", QuantMethod::kGptqW4A16, recs, default_policy(), nullptr);
  ASSERT_EQ(o.status, OutcomeStatus::kFlagged);
  HumanVerdict v{L::kFormulaRuleError, 2, "alice", "2026-01-01T00:00:00Z"};
  auto r = resolve_with_human(o, v, false);
  EXPECT_EQ(r.status, OutcomeStatus::kAccepted);
  EXPECT_EQ(r.final_label, L::kFormulaRuleError);
  EXPECT_EQ(r.consensus_step, 2);
  EXPECT_EQ(r.tally, o.tally);
  EXPECT_EQ(Json(resolve_with_human(r, v, false)).dump(), Json(r).dump());

  auto noerr = resolve_with_human(o, {L::kNoError, std::nullopt, "bob", "t"}, true);
  EXPECT_EQ(noerr.status, OutcomeStatus::kRescoredCorrect);
  auto dismissed = resolve_with_human(o, {L::kNoError, std::nullopt, "bob", "t"}, false);
  EXPECT_EQ(dismissed.status, OutcomeStatus::kDismissed);
}

TEST(Human, AcceptedNeedsAuditSample) {
  auto recs = records_of(panel_of({L::kProceduralError, L::kProceduralError, L::kProceduralError,
                                   L::kProceduralError, L::kProceduralError}));
  auto o = decide_case("5", "m", QuantMethod::kGptqW4A16, recs, default_policy(), nullptr);
  HumanVerdict v{L::kProceduralError, 1, "alice", "t"};
  try {
    resolve_with_human(o, v, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotReviewable);
  }
  o.audit_sampled = true;
  auto r = resolve_with_human(o, v, false);
  EXPECT_EQ(r.status, OutcomeStatus::kAccepted);
  EXPECT_EQ(r.final_label, o.final_label);
}

TEST(Outcome, JsonRoundTrip) {
  auto recs = records_of(panel_of({L::kProceduralError, L::kFormulaRuleError, L::kProceduralError,
                                   L::kProceduralError, L::kProceduralError}));
  auto o = decide_case("5", "m", QuantMethod::kGptqW4A16, recs, default_policy(), nullptr);
  o.human_verdict = HumanVerdict{L::kProceduralError, 1, "a", "t"};
  Json j = o;
  EXPECT_EQ(Json(j.get<ConsensusOutcome>()).dump(), j.dump());
}

}  // namespace
}  // namespace qdiag
