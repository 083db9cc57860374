#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "qdiag/io.hpp"
#include "qdiag/percent.hpp"
#include "qdiag/solution_format.hpp"

namespace qdiag {

struct GoldRecord {
  std::string case_id;
  std::string problem_text;
  std::string gold_answer;
  std::string level;
  std::string subject;
};

using GoldSet = std::map<std::string, GoldRecord>;

void to_json(Json& j, const GoldRecord& g);
void from_json(const Json& j, GoldRecord& g);
GoldSet load_gold(const std::filesystem::path& path);

enum class CaseStatus { kCorrect, kWrongAnswer, kFormatViolation, kMissing };

std::string_view to_key(CaseStatus status);
CaseStatus parse_case_status(std::string_view text);

struct CaseScore {
  bool correct = false;
  CaseStatus status = CaseStatus::kMissing;
  std::string final_answer;
  std::string detail;
};

struct ScoreReport {
  std::string model_id;
  QuantMethod quant_method = QuantMethod::kBf16;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t format_violations = 0;
  Percent accuracy;
  std::map<std::string, CaseScore> per_case;
};

void to_json(Json& j, const ScoreReport& r);
void from_json(const Json& j, ScoreReport& r);

/// Scores one (model, quant) transcript set over the whole gold universe.
/// Cases without a transcript count as incorrect with status `missing`.
/// Throws MissingGold, DuplicateTranscript, or ConfigError when a transcript
/// belongs to a different model or quant method.
ScoreReport score_predictions(const std::string& model_id, QuantMethod quant,
                              std::span<const Transcript> transcripts, const GoldSet& gold,
                              const StepMarker& marker = StepMarker());

using TranscriptKey = std::pair<std::string, QuantMethod>;
std::map<TranscriptKey, std::vector<Transcript>> group_transcripts(std::span<const Transcript> all);

struct DegradationDelta {
  Percent baseline_accuracy;
  Percent quant_accuracy;
  Percent delta_abs;
  Percent delta_pct;

  /// "↓5.4(11.44%)"; an improvement renders with "↑" and magnitudes.
  std::string render() const;
};

void to_json(Json& j, const DegradationDelta& d);

/// Throws BaselineZero when the baseline accuracy is 0.
DegradationDelta degradation_delta(Percent baseline, Percent quant);
DegradationDelta degradation_delta(const ScoreReport& baseline, const ScoreReport& quant);

/// Cases the full-precision model solved and the quantized model missed.
/// Throws UniverseMismatch when the reports cover different case sets.
std::set<std::string> extract_failures(const ScoreReport& fp, const ScoreReport& quant);

}  // namespace qdiag
