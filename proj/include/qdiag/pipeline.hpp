#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qdiag/consensus.hpp"
#include "qdiag/curation.hpp"
#include "qdiag/judge_client.hpp"
#include "qdiag/review.hpp"

namespace qdiag {

enum class Stage { kScoreFp, kScoreQuant, kExtractFailures, kJudge, kConsensus, kReview, kCurate, kReport };

inline constexpr std::array<Stage, 8> kAllStages = {Stage::kScoreFp, Stage::kScoreQuant, Stage::kExtractFailures,
                                                    Stage::kJudge,   Stage::kConsensus,  Stage::kReview,
                                                    Stage::kCurate,  Stage::kReport};

std::string_view to_key(Stage stage);
Stage parse_stage(std::string_view text);

enum class StageState { kPending, kRunning, kDone, kFailed };

std::string_view to_key(StageState state);
StageState parse_stage_state(std::string_view text);

/// Pipeline configuration. Input paths are resolved against the config
/// file's directory when a run is initialised.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path gold_path;
  std::vector<std::filesystem::path> transcript_paths;
  std::vector<std::pair<std::string, ModelScale>> models;
  std::vector<QuantMethod> quant_methods;
  std::string step_marker = "Step {k}:";
  std::vector<JudgeSpec> judges;
  ConsensusPolicy policy;
  bool include_gold_solution = false;
  double audit_rate = 0.02;
  std::vector<AblationSetting> settings{AblationSetting::kAll};
  std::optional<std::size_t> target;  // absent: the whole deduplicated pool
  std::string system_prompt;

  /// Throws ConfigError; `seed` is mandatory.
  static RunConfig parse(const Json& doc);
  std::map<std::string, ModelScale> scales() const;
};

/// Seed for one pipeline step, derived from the run seed and a step name.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name);

struct StageRecord {
  StageState state = StageState::kPending;
  std::string input_digest;
  std::map<std::string, std::string> outputs;  // run-relative path -> sha256
  Json counts = Json::object();
  std::string error;
};

struct RunManifest {
  std::string run_id;
  std::string created_at;
  std::string config_digest;
  std::map<std::string, std::string> inputs;  // input file name -> sha256
  Json seeds = Json::object();
  std::map<Stage, StageRecord> stages;

  /// Throws CorruptRun when a done stage follows one that is not done.
  void validate() const;
};

void to_json(Json& j, const RunManifest& m);
void from_json(const Json& j, RunManifest& m);

struct RunOptions {
  std::string judge_url;  // replaces every judge endpoint when set
};

/// One run directory: manifest.json, config.json and the stage output
/// folders. Holds an exclusive lock on the directory while open.
class Run {
 public:
  /// Creates the run directory. Throws ConfigError if it already holds a
  /// manifest, RunLocked if another process holds it.
  static Run init(const std::filesystem::path& run_dir, const std::filesystem::path& config_path,
                  std::optional<std::uint64_t> seed_override = std::nullopt, RunOptions options = {});

  /// Reopens an existing run. Stages left running by a crash return to
  /// pending; every done stage's outputs are checked against the manifest.
  /// Throws CorruptRun naming the failing file, or RunLocked.
  static Run open(const std::filesystem::path& run_dir, RunOptions options = {});

  Run(Run&& other) noexcept;
  Run& operator=(Run&&) = delete;
  ~Run();

  const RunManifest& manifest() const { return manifest_; }
  const RunConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }

  /// Merges `patch` into config.json (JSON merge patch) and revalidates.
  void update_config(const Json& patch);

  /// Executes one stage. A done stage whose inputs are unchanged is left
  /// alone unless `force` is set; stages whose inputs changed are reset to
  /// pending along with everything after them. Returns true if the stage
  /// executed. Throws StageOrderViolation, or StageFailed with the cause.
  bool run_stage(Stage stage, bool force = false);

  /// Runs every stage up to and including `last` that is not current.
  void run_through(Stage last = Stage::kReport);

  /// Marks stages whose inputs changed, and their successors, pending.
  void refresh();

  std::vector<ConsensusOutcome> outcomes_with_verdicts() const;

 private:
  Run(std::filesystem::path dir, int lock_fd, RunOptions options);

  void load();
  void save_manifest() const;
  std::string input_digest(Stage stage) const;
  StageRecord execute(Stage stage);

  StageRecord exec_score(bool quantized);
  StageRecord exec_failures();
  StageRecord exec_judge();
  StageRecord exec_consensus();
  StageRecord exec_review();
  StageRecord exec_curate();
  StageRecord exec_report();

  std::filesystem::path dir_;
  int lock_fd_ = -1;
  RunOptions options_;
  Json config_doc_;
  RunConfig config_;
  RunManifest manifest_;
};

/// "<model>__<quant>", safe as a file name.
std::string run_slug(const std::string& model_id, QuantMethod quant);

}  // namespace qdiag
