#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "case_fixtures.hpp"
#include "qdiag/error.hpp"
#include "qdiag/scoring.hpp"

namespace qdiag {
namespace {

std::string boxed(const std::string& answer) {
  return "Step 1: Work it out.\nStep 2: The answer is \\boxed{" + answer + "}.";
}

GoldSet make_gold(int n) {
  GoldSet gold;
  for (int i = 0; i < n; ++i) {
    std::string id = std::to_string(1000 + i);
    gold[id] = {id, "problem " + id, std::to_string(i), "Level 1", "Algebra"};
  }
  return gold;
}

TEST(Score, PerfectScore) {
  GoldSet gold = make_gold(3);
  std::vector<Transcript> ts;
  for (const auto& [id, g] : gold) ts.push_back({id, "m", QuantMethod::kBf16, boxed(g.gold_answer)});
  auto r = score_predictions("m", QuantMethod::kBf16, ts, gold);
  EXPECT_EQ(r.accuracy.fixed2(), "100.00");
  EXPECT_EQ(r.correct, 3u);
}

TEST(Score, FiftyCasesTwentyOneCorrect) {
  GoldSet gold = make_gold(50);
  std::vector<Transcript> ts;
  int i = 0;
  std::size_t expected_correct = 0, expected_fv = 0;
  for (const auto& [id, g] : gold) {
    std::string raw;
    if (i < 21) {
      raw = boxed(g.gold_answer);
    } else if (i < 45) {
      raw = boxed(g.gold_answer + "1");
    } else if (i < 48) {
      raw = "no steps here \\boxed{" + g.gold_answer + "}";
    }
    if (!raw.empty()) ts.push_back({id, "m", QuantMethod::kAwqW4A16, raw});
    ++i;
  }
  // Count oracle, independent of the scorer.
  for (const auto& t : ts) {
    bool has_step = t.raw_output.rfind("Step 1:", 0) == 0;
    if (!has_step) ++expected_fv;
    else if (t.raw_output == boxed(gold[t.case_id].gold_answer)) ++expected_correct;
  }
  ASSERT_EQ(expected_correct, 21u);
  auto r = score_predictions("m", QuantMethod::kAwqW4A16, ts, gold);
  EXPECT_EQ(r.correct, expected_correct);
  EXPECT_EQ(r.format_violations, expected_fv);
  EXPECT_EQ(r.total, 50u);
  EXPECT_EQ(r.accuracy.fixed2(), "42.00");
  EXPECT_EQ(r.per_case.at("1049").status, CaseStatus::kMissing);
  EXPECT_EQ(r.per_case.at("1046").status, CaseStatus::kFormatViolation);
  EXPECT_FALSE(r.per_case.at("1046").correct);
}

TEST(Score, FormVariantCountsAsCorrect) {
  GoldSet gold;
  gold["7"] = {"7", "p", "\\frac{11}{2}", "", ""};
  std::vector<Transcript> ts = {{"7", "m", QuantMethod::kBf16, boxed("5.5")}};
  EXPECT_TRUE(score_predictions("m", QuantMethod::kBf16, ts, gold).per_case.at("7").correct);
}

TEST(Score, Errors) {
  GoldSet gold = make_gold(2);
  std::vector<Transcript> unknown = {{"nope", "m", QuantMethod::kBf16, boxed("1")}};
  try {
    score_predictions("m", QuantMethod::kBf16, unknown, gold);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingGold);
  }
  std::vector<Transcript> dup = {{"1000", "m", QuantMethod::kBf16, boxed("0")},
                                 {"1000", "m", QuantMethod::kBf16, boxed("0")}};
  try {
    score_predictions("m", QuantMethod::kBf16, dup, gold);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateTranscript);
  }
}

TEST(Score, PermutationInvariantAndDeterministic) {
  GoldSet gold = make_gold(30);
  std::vector<Transcript> ts;
  int i = 0;
  for (const auto& [id, g] : gold) {
    ts.push_back({id, "m", QuantMethod::kBf16, boxed(i++ % 3 ? g.gold_answer : "x")});
  }
  Json first = score_predictions("m", QuantMethod::kBf16, ts, gold);
  std::mt19937 rng(1);
  for (int k = 0; k < 10; ++k) {
    std::shuffle(ts.begin(), ts.end(), rng);
    Json again = score_predictions("m", QuantMethod::kBf16, ts, gold);
    EXPECT_EQ(first.dump(), again.dump());
  }
  auto back = first.get<ScoreReport>();
  EXPECT_EQ(Json(back).dump(), first.dump());
}

TEST(Delta, TableValues) {
  auto d = degradation_delta(Percent::parse("47.2"), Percent::parse("41.8"));
  EXPECT_EQ(d.delta_abs.compact(), "5.4");
  EXPECT_EQ(d.delta_pct.fixed2(), "11.44");
  EXPECT_EQ(d.render(), "↓5.4(11.44%)");

  auto none = degradation_delta(Percent::parse("18.6"), Percent::parse("18.6"));
  EXPECT_EQ(none.delta_abs.compact(), "0.0");
  EXPECT_EQ(none.delta_pct.fixed2(), "0.00");

  // 8.6 / 40.2 = 21.393...%
  auto d3 = degradation_delta(Percent::parse("40.2"), Percent::parse("31.6"));
  EXPECT_EQ(d3.render(), "↓8.6(21.39%)");

  auto up = degradation_delta(Percent::parse("40"), Percent::parse("41"));
  EXPECT_EQ(up.delta_abs.hundredths(), -100);
  EXPECT_EQ(up.render(), "↑1.0(2.50%)");

  try {
    degradation_delta(Percent(), Percent::parse("1"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBaselineZero);
  }
}

TEST(Delta, Antisymmetric) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    auto a = Percent::from_hundredths(1 + static_cast<std::int64_t>(rng() % 10000));
    auto b = Percent::from_hundredths(1 + static_cast<std::int64_t>(rng() % 10000));
    EXPECT_EQ(degradation_delta(a, b).delta_abs, -degradation_delta(b, a).delta_abs);
  }
}

ScoreReport report_with(const std::vector<std::string>& universe, const std::set<std::string>& correct) {
  ScoreReport r;
  for (const auto& id : universe) {
    CaseScore c;
    c.correct = correct.contains(id);
    c.status = c.correct ? CaseStatus::kCorrect : CaseStatus::kWrongAnswer;
    r.per_case[id] = c;
  }
  return r;
}

TEST(Failures, SetDefinition) {
  std::vector<std::string> u = {"1", "2", "3", "4"};
  auto fp = report_with(u, {"1", "2", "3"});
  auto q = report_with(u, {"2"});
  EXPECT_EQ(extract_failures(fp, q), (std::set<std::string>{"1", "3"}));
  EXPECT_TRUE(extract_failures(report_with(u, {}), q).empty());
  EXPECT_TRUE(extract_failures(fp, fp).empty());
  try {
    extract_failures(fp, report_with({"1", "9"}, {}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUniverseMismatch);
  }
}

TEST(Failures, ThreeScalesTaggedUnion) {
  // Per-scale failure counts summing to 3329; ids overlap across scales, so
  // only tagging by scale keeps them distinct.
  const std::vector<std::pair<std::string, int>> scales = {{"1B", 1500}, {"3B", 1100}, {"8B", 729}};
  std::vector<std::string> u;
  for (int i = 0; i < 2000; ++i) u.push_back(std::to_string(i));
  std::set<std::pair<std::string, std::string>> tagged;
  for (const auto& [scale, n] : scales) {
    std::set<std::string> fp_correct(u.begin(), u.end());
    std::set<std::string> q_correct(u.begin() + n, u.end());
    for (const auto& id : extract_failures(report_with(u, fp_correct), report_with(u, q_correct))) {
      tagged.emplace(scale, id);
    }
  }
  EXPECT_EQ(tagged.size(), 3329u);
}

}  // namespace
}  // namespace qdiag
