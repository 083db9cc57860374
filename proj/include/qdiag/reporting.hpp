#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qdiag/consensus.hpp"
#include "qdiag/curation.hpp"
#include "qdiag/scoring.hpp"

namespace qdiag {

/// Shares of `counts` in hundredths of a percent, by largest remainder so
/// they sum to exactly 100.00 (ties to the earlier entry). All zero when the
/// counts sum to zero.
std::vector<Percent> percent_shares(std::span<const std::size_t> counts);

struct CountShare {
  std::size_t count = 0;
  Percent share;
};

struct GroupBy {
  bool model_scale = false;
  bool quant_method = false;
};

GroupBy parse_group_by(std::string_view text);  // "", "scale", "quant", "scale,quant"

struct DistributionReport {
  std::optional<ModelScale> model_scale;
  std::optional<QuantMethod> quant_method;
  std::map<ErrorCategory, CountShare> by_category;
  std::map<ErrorLabel, CountShare> by_label;
  std::size_t total = 0;
  std::size_t unresolved = 0;  // flagged outcomes left out of the counts
};

void to_json(Json& j, const DistributionReport& r);

/// Counts the single recorded label of each accepted outcome. Flagged
/// outcomes are counted as unresolved; outcomes that left the failure set
/// (rescored_correct, dismissed) are ignored. One report per group present,
/// ordered by group key; a single report when not grouping.
std::vector<DistributionReport> error_distribution(std::span<const ConsensusOutcome> outcomes, GroupBy group_by,
                                                   const std::map<std::string, ModelScale>& scales);

/// One score in a comparison table. Within a model, deltas are taken
/// against the entry marked as reference, which itself renders "-".
struct TableEntry {
  std::string model_id;
  std::string variant;
  Percent score;
  bool reference = false;
};

void to_json(Json& j, const TableEntry& e);
void from_json(const Json& j, TableEntry& e);

/// bf16 reports become references; quantized ones compare against them.
std::vector<TableEntry> entries_from_reports(std::span<const ScoreReport> reports);

struct TableRow {
  std::string model_id;
  std::string variant;
  std::string score;  // compact form, e.g. "47.2"
  std::string delta;  // "↓5.4(11.44%)" or "-"
};

struct ComparisonTable {
  std::vector<TableRow> rows;

  Json to_json() const;
  std::string to_csv() const;
};

/// Rows keep input order. Throws MissingBaseline when a model has no
/// reference entry, BaselineZero when the reference score is 0.
ComparisonTable comparison_table(std::span<const TableEntry> entries);

struct RadarRow {
  ModelScale model_scale = ModelScale::k1B;
  std::size_t total = 0;
  std::map<ErrorCategory, Percent> shares;
};

struct RadarMatrix {
  std::vector<RadarRow> rows;

  Json to_json() const;
  std::string to_csv() const;
};

/// Category shares per scale; a scale without failures gets a zero row.
/// Throws InvalidArgument when `scales_shown` is empty.
RadarMatrix radar_matrix(std::span<const ConsensusOutcome> outcomes, std::span<const ModelScale> scales_shown,
                         const std::map<std::string, ModelScale>& scales);

std::string distribution_csv(std::span<const DistributionReport> reports);

}  // namespace qdiag
