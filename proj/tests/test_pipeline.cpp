#include <gtest/gtest.h>

#include <filesystem>

#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/io.hpp"
#include "qdiag/pipeline.hpp"
#include "qdiag/stub_judge.hpp"

namespace qdiag {
namespace {

namespace fs = std::filesystem;

const fs::path kCorpus = fs::path(QDIAG_FIXTURE_DIR) / "corpus";

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            fmt::format("qdiag_pipeline_{}", ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
    stub_ = std::make_unique<StubJudgeServer>(load_scenario(kCorpus / "scenario.json"));
    stub_->start();
  }
  void TearDown() override {
    stub_->stop();
    fs::remove_all(root_);
  }

  qdiag::Run init(const std::string& name) { return qdiag::Run::init(root_ / name, kCorpus / "config.json", std::nullopt, options()); }
  RunOptions options() const { return RunOptions{stub_->base_url()}; }

  fs::path root_;
  std::unique_ptr<StubJudgeServer> stub_;
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvariantViolation;
}

std::map<std::string, std::string> tree(const fs::path& dir, std::initializer_list<const char*> subdirs) {
  std::map<std::string, std::string> out;
  for (const char* sub : subdirs) {
    for (const auto& e : fs::recursive_directory_iterator(dir / sub)) {
      if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
  }
  return out;
}

TEST_F(PipelineTest, FirstStageAndOrderGuard) {
  qdiag::Run run = init("r");
  EXPECT_TRUE(run.run_stage(Stage::kScoreFp));
  const auto& rec = run.manifest().stages.at(Stage::kScoreFp);
  EXPECT_EQ(rec.state, StageState::kDone);
  EXPECT_EQ(rec.counts["llama-8b"], "92.00");
  EXPECT_EQ(code_of([&] { run.run_stage(Stage::kConsensus); }), ErrorCode::kStageOrderViolation);
  EXPECT_FALSE(run.run_stage(Stage::kScoreFp));
  auto m = read_json(run.dir() / "manifest.json").get<RunManifest>();
  EXPECT_EQ(m.stages.at(Stage::kScoreFp).state, StageState::kDone);
  EXPECT_EQ(m.seeds["run"], 20240611);
}

TEST_F(PipelineTest, JudgeRerunUsesCacheOnly) {
  qdiag::Run run = init("r");
  run.run_through(Stage::kJudge);
  EXPECT_EQ(run.manifest().stages.at(Stage::kJudge).counts["requests"], 310);
  stub_->clear_log();
  EXPECT_FALSE(run.run_stage(Stage::kJudge));
  EXPECT_TRUE(run.run_stage(Stage::kJudge, /*force=*/true));
  EXPECT_EQ(stub_->request_count(), 0u);
  EXPECT_EQ(run.manifest().stages.at(Stage::kJudge).counts["cache_hits"], 310);
}

TEST_F(PipelineTest, FullRunCountsAndDeterminism) {
  {
    qdiag::Run a = init("a");
    a.run_through();
    const auto& m = a.manifest();
    for (Stage s : kAllStages) EXPECT_EQ(m.stages.at(s).state, StageState::kDone) << to_key(s);
    EXPECT_EQ(m.stages.at(Stage::kExtractFailures).counts["total"], 64);
    EXPECT_EQ(m.stages.at(Stage::kConsensus).counts["flagged"], 5);
    EXPECT_EQ(m.stages.at(Stage::kConsensus).counts["accepted"], 57);
    EXPECT_EQ(m.stages.at(Stage::kReview).counts["audit_sample"], 2);
    EXPECT_EQ(m.stages.at(Stage::kReview).counts["conflict"], 5);
  }
  {
    qdiag::Run b = init("b");
    b.run_through();
  }
  auto ta = tree(root_ / "a", {"datasets", "outcomes", "reports", "scores", "failures", "assessments"});
  auto tb = tree(root_ / "b", {"datasets", "outcomes", "reports", "scores", "failures", "assessments"});
  EXPECT_FALSE(ta.empty());
  EXPECT_EQ(ta, tb);
  EXPECT_EQ(read_file(root_ / "a" / "review" / "queue.jsonl"), read_file(root_ / "b" / "review" / "queue.jsonl"));
}

TEST_F(PipelineTest, ResumeAfterJudgeMatchesUninterruptedRun) {
  {
    qdiag::Run full = init("full");
    full.run_through();
  }
  {
    qdiag::Run part = init("part");
    part.run_through(Stage::kJudge);
  }
  stub_->clear_log();
  {
    qdiag::Run resumed = qdiag::Run::open(root_ / "part", options());
    EXPECT_EQ(resumed.manifest().stages.at(Stage::kConsensus).state, StageState::kPending);
    EXPECT_FALSE(resumed.run_stage(Stage::kJudge));
    resumed.run_through();
  }
  EXPECT_EQ(stub_->request_count(), 0u);
  auto dirs = {"datasets", "outcomes", "reports"};
  EXPECT_EQ(tree(root_ / "part", dirs), tree(root_ / "full", dirs));

  // Resuming a finished run executes nothing.
  qdiag::Run again = qdiag::Run::open(root_ / "full", options());
  for (Stage s : kAllStages) EXPECT_FALSE(again.run_stage(s));
}

TEST_F(PipelineTest, InterruptedStageIsRedone) {
  {
    qdiag::Run run = init("r");
    run.run_through(Stage::kJudge);
  }
  Json m = read_json(root_ / "r" / "manifest.json");
  m["stages"]["consensus"]["state"] = "running";
  write_json_atomic(root_ / "r" / "manifest.json", m);
  qdiag::Run run = qdiag::Run::open(root_ / "r", options());
  EXPECT_EQ(run.manifest().stages.at(Stage::kConsensus).state, StageState::kPending);
  EXPECT_TRUE(run.run_stage(Stage::kConsensus));
}

TEST_F(PipelineTest, CorruptionAndLocking) {
  EXPECT_EQ(code_of([&] { qdiag::Run::open(root_ / "missing"); }), ErrorCode::kCorruptRun);
  fs::create_directories(root_ / "empty");
  EXPECT_EQ(code_of([&] { qdiag::Run::open(root_ / "empty"); }), ErrorCode::kCorruptRun);
  {
    qdiag::Run run = init("r");
    run.run_through(Stage::kExtractFailures);
    EXPECT_EQ(code_of([&] { qdiag::Run::open(root_ / "r"); }), ErrorCode::kRunLocked);
  }
  write_file_atomic(root_ / "r" / "failures" / "llama-8b__awq_w4a16.json", "{}\n");
  try {
    qdiag::Run::open(root_ / "r");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCorruptRun);
    EXPECT_NE(std::string(e.what()).find("llama-8b__awq_w4a16.json"), std::string::npos);
  }
  write_file_atomic(root_ / "r" / "manifest.json", "{not json");
  EXPECT_EQ(code_of([&] { qdiag::Run::open(root_ / "r"); }), ErrorCode::kCorruptRun);
}

TEST_F(PipelineTest, ConfigChangeInvalidatesDownstreamOnly) {
  qdiag::Run run = init("r");
  run.run_through();
  run.update_config(Json{{"policy", {{"quorum", 5}}}});
  run.refresh();
  const auto& m = run.manifest();
  EXPECT_EQ(m.stages.at(Stage::kJudge).state, StageState::kDone);
  EXPECT_EQ(m.stages.at(Stage::kConsensus).state, StageState::kPending);
  EXPECT_EQ(m.stages.at(Stage::kReport).state, StageState::kPending);
  stub_->clear_log();
  run.run_through();
  EXPECT_EQ(stub_->request_count(), 0u);
  // Quorum 5 loses the two quorum overrides.
  EXPECT_EQ(run.manifest().stages.at(Stage::kConsensus).counts["flagged"], 7);
}

TEST_F(PipelineTest, VerdictsReachCuration) {
  qdiag::Run run = init("r");
  run.run_through();
  auto before = run.manifest().stages.at(Stage::kCurate).counts;
  {
    ReviewStore store(run.dir() / "review");
    auto page = store.queue_snapshot({ReviewState::kPending, ReviewReason::kConflict});
    ASSERT_EQ(page.total, 5u);
    for (const auto& item : page.items) {
      store.record_verdict({item.item_id, ErrorLabel::kContextualOversight, 1, "reviewer"});
    }
  }
  run.refresh();
  EXPECT_EQ(run.manifest().stages.at(Stage::kReview).state, StageState::kDone);
  EXPECT_EQ(run.manifest().stages.at(Stage::kCurate).state, StageState::kPending);
  run.run_through();
  auto summary = read_json(run.dir() / "datasets" / "curation_summary.json");
  EXPECT_EQ(summary["failure_pool"], 62);
}

TEST(RunConfigTest, SeedIsMandatory) {
  Json doc = read_json(kCorpus / "config.json");
  EXPECT_NO_THROW(RunConfig::parse(doc));
  doc.erase("seed");
  EXPECT_EQ(code_of([&] { RunConfig::parse(doc); }), ErrorCode::kConfigError);
}

TEST(RunConfigTest, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, "review"), derive_seed(1, "curate"));
  EXPECT_EQ(derive_seed(1, "review"), derive_seed(1, "review"));
}

}  // namespace
}  // namespace qdiag
