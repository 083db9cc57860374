#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "qdiag/consensus.hpp"
#include "qdiag/scoring.hpp"

namespace qdiag {

enum class ModelScale { k1B, k3B, k8B };

std::string_view to_key(ModelScale scale);
ModelScale parse_model_scale(std::string_view text);

struct FailureCase {
  std::string case_id;
  std::string model_id;
  ModelScale model_scale = ModelScale::k1B;
  QuantMethod quant_method = QuantMethod::kAwqW4A16;
  ErrorLabel final_label = ErrorLabel::kConceptualMisunderstanding;
  int consensus_step = 1;
  int vote_margin = 0;
  StepwiseSolution fp_solution;
  StepwiseSolution quant_solution;
  std::string problem_text;
  std::string gold_answer;
  std::string level;

  ErrorCategory category() const { return *category_of(final_label); }
};

/// Solutions are stored as raw text and re-parsed with the default marker.
void to_json(Json& j, const FailureCase& c);
void from_json(const Json& j, FailureCase& c);
std::vector<FailureCase> load_failure_pool(const std::filesystem::path& path);

/// Transcripts addressed by (model_id, quant_method, case_id).
class TranscriptIndex {
 public:
  void add(const Transcript& t);
  void add_all(std::span<const Transcript> ts);
  const Transcript* find(const std::string& model_id, QuantMethod quant, const std::string& case_id) const;

 private:
  std::map<std::tuple<std::string, QuantMethod, std::string>, Transcript> by_key_;
};

struct PoolExclusion {
  std::string case_key;
  std::string reason;
};

struct FailurePool {
  std::vector<FailureCase> cases;
  std::vector<PoolExclusion> excluded;
};

/// One FailureCase per accepted, labelled outcome. Outcomes in any other
/// status are skipped. A case is excluded (with a reason) when either side
/// breaks the step format, the full-precision answer is not equivalent to
/// gold, or the quantized answer is. The full-precision side is the bf16
/// transcript of the same model. Throws MissingTranscript, MissingGold, or
/// ConfigError for a model without a scale.
FailurePool build_failure_pool(std::span<const ConsensusOutcome> outcomes, const TranscriptIndex& transcripts,
                               const GoldSet& gold, const std::map<std::string, ModelScale>& scales,
                               const StepMarker& marker = StepMarker());

/// At most one case per case_id, keeping the highest vote_margin, then the
/// larger scale, then the lexicographically smaller quant method and model.
/// Output sorted by case_id.
std::vector<FailureCase> deduplicate(std::vector<FailureCase> pool);

/// Largest-remainder apportionment of `target` proportional to the pool
/// counts; remainder ties go to the larger count, then category order. When
/// target covers every nonzero category, each receives at least one. Throws
/// TargetExceedsPool.
std::map<ErrorCategory, std::size_t> allocate_quota(const std::map<ErrorCategory, std::size_t>& pool,
                                                    std::size_t target);

std::map<ErrorCategory, std::size_t> category_counts(std::span<const FailureCase> pool);

/// Per category: order by vote_margin descending then consensus_step
/// ascending, with exact ties ordered by a seeded shuffle of the case_id
/// order, and take the quota head. Output grouped by category in that order.
std::vector<FailureCase> select_cases(std::span<const FailureCase> pool,
                                      const std::map<ErrorCategory, std::size_t>& quota, std::uint64_t seed);

enum class AblationSetting { kAll, kConceptual, kMethod, kExecution };

std::string_view to_key(AblationSetting s);
AblationSetting ablation_setting_from_id(int id);
std::optional<ErrorCategory> category_filter(AblationSetting s);

struct PreferencePair {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string case_id;
  std::string model_id;
  ErrorLabel error_label = ErrorLabel::kConceptualMisunderstanding;
  ModelScale model_scale = ModelScale::k1B;
  QuantMethod quant_method = QuantMethod::kAwqW4A16;
  std::string difficulty;
  int consensus_step = 1;
  int vote_margin = 0;
};

void to_json(Json& j, const PreferencePair& p);

/// Applies the setting's filter and builds pairs, re-checking that the
/// chosen answer matches gold, the rejected one does not, and the two texts
/// differ. Throws InvariantViolation otherwise.
std::vector<PreferencePair> build_preference_pairs(std::span<const FailureCase> selected,
                                                   AblationSetting setting, std::string_view system_prompt);

struct EmitResult {
  std::size_t count = 0;
  std::vector<std::string> warnings;
};

/// Writes the pairs as JSON Lines (atomic). Throws IoFailure.
EmitResult emit_preference_pairs(std::span<const FailureCase> selected, AblationSetting setting,
                                 std::string_view system_prompt, const std::filesystem::path& out_path);

Json emit_training_recipe(AblationSetting setting, const std::string& dataset_path);

}  // namespace qdiag
