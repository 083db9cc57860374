#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>

#include "case_fixtures.hpp"
#include "qdiag/judge_client.hpp"
#include "qdiag/stub_judge.hpp"

namespace qdiag {
namespace {

namespace fs = std::filesystem;

std::string chat_json(int step, const std::string& label, double conf = 0.9) {
  return Json{{"first_error_step", step}, {"error_type", label}, {"explanation", "x"}, {"confidence", conf}}.dump();
}

ErrorCode reply_error_code(std::string_view raw, std::size_t steps, std::string* kept = nullptr) {
  try {
    parse_assessment(raw, steps);
  } catch (const JudgeReplyError& e) {
    if (kept) *kept = e.raw_response();
    return e.code();
  }
  ADD_FAILURE() << "no JudgeReplyError";
  return ErrorCode::kInvariantViolation;
}

TEST(ParseAssessment, StructuredReply) {
  auto f = parse_assessment(
      R"({"first_error_step":2,"error_type":"computational_error","explanation":"sign mishandled","confidence":0.9})", 3);
  EXPECT_EQ(f.first_error_step, 2);
  EXPECT_EQ(f.error_label, ErrorLabel::kComputationalError);
  EXPECT_EQ(f.explanation, "sign mishandled");
  EXPECT_DOUBLE_EQ(f.confidence, 0.9);
}

TEST(ParseAssessment, NoErrorsProse) {
  auto f = parse_assessment("No Errors: the answers match.", 3);
  EXPECT_EQ(f.error_label, ErrorLabel::kNoError);
  EXPECT_FALSE(f.first_error_step.has_value());
  EXPECT_DOUBLE_EQ(f.confidence, 0.5);
}

TEST(ParseAssessment, CategoryIsNotALeafLabel) {
  std::string kept;
  EXPECT_EQ(reply_error_code(R"({"error_type":"execution"})", 3, &kept), ErrorCode::kParseFailure);
  EXPECT_EQ(kept, R"({"error_type":"execution"})");
}

TEST(ParseAssessment, Leniency) {
  auto wrapped = parse_assessment(
      "Sure! Here is my verdict:\n```json\n{\"first_error_step\": \"Step 3\", \"error_type\": "
      "\"Logical Reasoning Error\", \"explanation\": \"missed {27}\", \"confidence\": 1.7}\n```",
      4);
  EXPECT_EQ(wrapped.first_error_step, 3);
  EXPECT_EQ(wrapped.error_label, ErrorLabel::kLogicalReasoningError);
  EXPECT_DOUBLE_EQ(wrapped.confidence, 1.0);

  auto neg = parse_assessment(R"({"first_error_step":1,"error_type":"procedural_error","confidence":-2})", 2);
  EXPECT_DOUBLE_EQ(neg.confidence, 0.0);

  // no_error never carries a step.
  auto ne = parse_assessment(R"({"first_error_step":2,"error_type":"no_error"})", 3);
  EXPECT_FALSE(ne.first_error_step.has_value());
}

TEST(ParseAssessment, Rejections) {
  EXPECT_EQ(reply_error_code(R"({"first_error_step":9,"error_type":"computational_error"})", 4),
            ErrorCode::kStepOutOfRange);
  EXPECT_EQ(reply_error_code(R"({"error_type":"computational_error"})", 4), ErrorCode::kParseFailure);
  EXPECT_EQ(reply_error_code(R"({"first_error_step":0,"error_type":"computational_error"})", 4),
            ErrorCode::kParseFailure);
  EXPECT_EQ(reply_error_code("I think step two is wrong.", 4), ErrorCode::kParseFailure);
}

TEST(JudgePrompt, ContainsStepsAndTaxonomy) {
  auto parsed = parse_solution(fixtures::kCase93Quant);
  const auto& sol = std::get<StepwiseSolution>(parsed);
  JudgeCaseView view{"llama-1b/gptq_w4a16/93", fixtures::kCase93Problem, fixtures::kCase93Gold, std::nullopt,
                     &sol, ""};
  std::string p = render_judge_prompt(view, kErrorLabels);
  EXPECT_NE(p.find("Step 2: A radius of 1 means 34 - c = 1, so c = 34 + 1 = 35."), std::string::npos);
  for (ErrorLabel l : kErrorLabels) EXPECT_NE(p.find(std::string(to_key(l))), std::string::npos);
  for (ErrorCategory c : kAllCategories) EXPECT_NE(p.find(std::string(display_name(c))), std::string::npos);
  EXPECT_NE(p.find(fixtures::kCase93Gold), std::string::npos);
  EXPECT_NE(p.find("no_error"), std::string::npos);
  EXPECT_EQ(p, render_judge_prompt(view, kErrorLabels));

  view.gold_solution = "Complete the square.";
  EXPECT_EQ(render_judge_prompt(view, kErrorLabels).find("Reference solution"), std::string::npos);
  EXPECT_NE(render_judge_prompt(view, kErrorLabels, {true}).find("Reference solution"), std::string::npos);

  try {
    render_judge_prompt(view, std::span<const ErrorLabel>());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
}

TEST(JudgePanel, Validation) {
  JudgeSpec a{"a", "http://x", "a", "", true};
  JudgeSpec b{"b", "http://x", "b", "", false};
  EXPECT_NO_THROW(JudgePanel({a, b}));
  EXPECT_EQ(JudgePanel({a, b}).baseline().judge_id, "a");
  b.is_baseline = true;
  EXPECT_THROW(JudgePanel({a, b}), Error);
  EXPECT_THROW(JudgePanel({a, a}), Error);
  EXPECT_THROW(JudgePanel(std::vector<JudgeSpec>{}), Error);
}

JudgeSpec spec_for(const StubJudgeServer& server, const std::string& model) {
  JudgeSpec s;
  s.judge_id = model;
  s.model_name = model;
  s.endpoint_url = server.base_url();
  s.is_baseline = true;
  s.max_retries = 3;
  s.backoff_base_ms = 50;
  s.timeout_s = 5;
  return s;
}

TEST(RequestAssessment, HappyPath) {
  StubScenario sc;
  sc.rules.push_back({"r1", "", {{200, chat_json(2, "computational_error")}}});
  StubJudgeServer server(sc);
  server.start();
  auto a = request_assessment(spec_for(server, "r1"), "prompt", 3, "93");
  EXPECT_EQ(a.error_label, ErrorLabel::kComputationalError);
  EXPECT_EQ(a.first_error_step, 2);
  EXPECT_EQ(a.case_id, "93");
  EXPECT_EQ(a.judge_id, "r1");
  auto body = Json::parse(server.request_log().at(0));
  EXPECT_EQ(body["temperature"], 0);
  EXPECT_EQ(body["model"], "r1");
  EXPECT_EQ(body["messages"][1]["content"], "prompt");
}

TEST(RequestAssessment, RetriesRateLimitWithBackoff) {
  StubScenario sc;
  sc.rules.push_back({"", "", {{429, "slow down"}, {429, "slow down"}, {200, chat_json(1, "formula_rule_error")}}});
  StubJudgeServer server(sc);
  server.start();
  auto start = std::chrono::steady_clock::now();
  auto a = request_assessment(spec_for(server, "m"), "p", 2);
  auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_EQ(a.error_label, ErrorLabel::kFormulaRuleError);
  EXPECT_EQ(server.request_count(), 3u);
  // Backoff sum: 50 ms + 100 ms.
  EXPECT_GE(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count(), 150);
}

TEST(RequestAssessment, ProseReplyIsParseFailure) {
  StubScenario sc;
  sc.rules.push_back({"", "", {{200, "Step 2 looks wrong to me."}}});
  StubJudgeServer server(sc);
  server.start();
  try {
    request_assessment(spec_for(server, "m"), "p", 3);
    FAIL();
  } catch (const JudgeReplyError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseFailure);
    EXPECT_EQ(e.raw_response(), "Step 2 looks wrong to me.");
  }
}

TEST(RequestAssessment, AuthAndAvailabilityErrors) {
  StubScenario sc;
  sc.require_api_key = "secret";
  sc.rules.push_back({"", "", {{200, chat_json(1, "procedural_error")}}});
  StubJudgeServer server(sc);
  server.start();
  auto spec = spec_for(server, "m");
  spec.api_key_env = "QDIAG_TEST_JUDGE_KEY";
  ::unsetenv("QDIAG_TEST_JUDGE_KEY");
  try {
    request_assessment(spec, "p", 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
  ::setenv("QDIAG_TEST_JUDGE_KEY", "wrong", 1);
  try {
    request_assessment(spec, "p", 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAuthError);
  }
  EXPECT_EQ(server.request_count(), 1u);
  ::setenv("QDIAG_TEST_JUDGE_KEY", "secret", 1);
  EXPECT_EQ(request_assessment(spec, "p", 2).error_label, ErrorLabel::kProceduralError);

  StubScenario down;
  down.rules.push_back({"", "", {{503, "down"}}});
  StubJudgeServer dead(down);
  dead.start();
  auto s2 = spec_for(dead, "m");
  s2.max_retries = 2;
  s2.backoff_base_ms = 1;
  try {
    request_assessment(s2, "p", 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kJudgeUnavailable);
  }
  EXPECT_EQ(dead.request_count(), 3u);
}

std::vector<JudgeJob> make_jobs(int n) {
  std::vector<JudgeJob> jobs;
  for (int i = 0; i < n; ++i) {
    jobs.push_back({std::to_string(i), "m1", QuantMethod::kAwqW4A16, "Case: m1/awq_w4a16/" + std::to_string(i), 3});
  }
  return jobs;
}

TEST(RunPanel, ParallelismBoundCacheAndReplay) {
  StubScenario sc;
  sc.default_delay_ms = 30;
  sc.rules.push_back({"", "", {{200, chat_json(1, "computational_error")}}});
  StubJudgeServer server(sc);
  server.start();

  auto j1 = spec_for(server, "alpha");
  j1.max_parallel = 3;
  auto j2 = spec_for(server, "beta");
  j2.is_baseline = false;
  j2.max_parallel = 2;
  JudgePanel panel({j1, j2});
  auto jobs = make_jobs(12);

  fs::path dir = fs::temp_directory_path() / "qdiag_test_cache";
  fs::remove_all(dir);
  AssessmentCache cache(dir);
  PanelRunStats stats;
  auto results = run_panel(panel, jobs, &cache, &stats);
  EXPECT_EQ(stats.requests, 24u);
  EXPECT_LE(server.max_in_flight("alpha"), 3);
  EXPECT_LE(server.max_in_flight("beta"), 2);
  EXPECT_GE(server.max_in_flight("alpha"), 2);
  ASSERT_EQ(results.size(), 12u);
  for (const auto& row : results) {
    ASSERT_EQ(row.size(), 2u);
    EXPECT_EQ(row[0].judge_id, "alpha");
    EXPECT_TRUE(row[1].ok());
  }
  auto first_log = server.sorted_request_log();

  // Everything cached: no network calls.
  server.clear_log();
  PanelRunStats again;
  auto cached = run_panel(panel, jobs, &cache, &again);
  EXPECT_EQ(server.request_count(), 0u);
  EXPECT_EQ(again.cache_hits, 24u);
  EXPECT_EQ(Json(cached[5][1]).dump(), Json(results[5][1]).dump());

  // Replaying without a cache sends byte-identical requests.
  server.clear_log();
  run_panel(panel, jobs, nullptr);
  EXPECT_EQ(server.sorted_request_log(), first_log);
  fs::remove_all(dir);
}

TEST(RunPanel, UnusableRepliesAreRecordedAndUnavailableIsRaised) {
  StubScenario sc;
  sc.rules.push_back({"good", "", {{200, chat_json(1, "computational_error")}}});
  sc.rules.push_back({"chatty", "", {{200, "no idea"}}});
  sc.rules.push_back({"dead", "", {{500, "boom"}}});
  StubJudgeServer server(sc);
  server.start();
  auto good = spec_for(server, "good");
  auto chatty = spec_for(server, "chatty");
  chatty.is_baseline = false;
  auto jobs = make_jobs(2);
  auto res = run_panel(JudgePanel({good, chatty}), jobs, nullptr);
  EXPECT_TRUE(res[0][0].ok());
  EXPECT_FALSE(res[0][1].ok());
  EXPECT_EQ(res[0][1].raw_response, "no idea");

  auto dead = spec_for(server, "dead");
  dead.is_baseline = false;
  dead.max_retries = 1;
  dead.backoff_base_ms = 1;
  try {
    run_panel(JudgePanel({good, dead}), jobs, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kJudgeUnavailable);
  }
}

TEST(JudgeRecord, JsonRoundTrip) {
  JudgeRecord r;
  r.judge_id = "j";
  r.case_id = "1";
  r.model_id = "m";
  r.quant_method = QuantMethod::kGptqW4A16;
  r.prompt_hash = "abc";
  r.assessment = JudgeAssessment{"j", "1", 2, ErrorLabel::kSymbolicManipulationError, "e", 0.25, "raw"};
  r.raw_response = "raw";
  Json j = r;
  EXPECT_EQ(Json(j.get<JudgeRecord>()).dump(), j.dump());
}

}  // namespace
}  // namespace qdiag
