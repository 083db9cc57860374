#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "qdiag/consensus.hpp"
#include "qdiag/percent.hpp"

namespace qdiag {

enum class ReviewReason { kConflict, kAuditSample };
enum class ReviewState { kPending, kResolved };

std::string_view to_key(ReviewReason reason);
std::string_view to_key(ReviewState state);
ReviewReason parse_review_reason(std::string_view text);
ReviewState parse_review_state(std::string_view text);

/// One entry of an item's verdict history. Rejected entries are double
/// resolves refused with AlreadyResolved; they are kept for the audit trail.
struct VerdictEntry {
  HumanVerdict verdict;
  bool supersedes = false;
  bool rejected = false;
};

struct ReviewItem {
  std::string item_id;
  ReviewReason reason = ReviewReason::kConflict;
  std::string problem_text;
  std::string gold_answer;
  std::vector<std::string> quant_steps;
  std::string quant_answer;
  std::vector<JudgeRecord> assessments;
  ConsensusOutcome outcome;                  // current, verdicts applied
  std::optional<ErrorLabel> automated_label;  // before any human verdict
  ReviewState state = ReviewState::kPending;
  std::optional<HumanVerdict> verdict;
  std::vector<VerdictEntry> history;

  const std::string& case_id() const { return outcome.case_id; }
};

/// "<model>:<quant>:<case>"; contains no slash so it fits in a URL segment.
std::string review_item_id(const ConsensusOutcome& outcome);

void to_json(Json& j, const VerdictEntry& e);
void from_json(const Json& j, VerdictEntry& e);
void to_json(Json& j, const ReviewItem& item);
void from_json(const Json& j, ReviewItem& item);

struct AgreementStats {
  std::int64_t audited = 0;
  std::int64_t matches = 0;

  /// matches / audited as a percentage; absent when nothing was audited.
  std::optional<Percent> agreement_rate() const;
};

void to_json(Json& j, const AgreementStats& s);

/// ceil(rate * n) cases from the case_id-sorted list, chosen by a seeded
/// shuffle. Throws EmptyPool, or InvalidArgument unless 0 < rate <= 1.
std::vector<std::string> sample_for_review(std::vector<std::string> cases, double rate, std::uint64_t seed);

struct QueueFilter {
  std::optional<ReviewState> state;
  std::optional<ReviewReason> reason;
  std::size_t offset = 0;
  std::size_t limit = SIZE_MAX;
};

struct QueuePage {
  std::vector<ReviewItem> items;
  std::size_t total = 0;  // matches before pagination
};

struct VerdictRequest {
  std::string item_id;
  ErrorLabel label = ErrorLabel::kNoError;
  std::optional<int> step;
  std::string reviewer_id;
  bool supersede = false;
};

/// Review queue persisted as an append-only JSON Lines event log. The
/// in-memory index is rebuilt from the log on open. Reads are concurrent;
/// writes are serialized and check item state before appending.
class ReviewStore {
 public:
  using Clock = std::function<std::string()>;

  explicit ReviewStore(std::filesystem::path dir, Clock clock = {});

  const std::filesystem::path& log_path() const { return log_path_; }

  /// Adds items not yet present. Re-adding an identical item is a no-op;
  /// a different item under an existing id throws InvalidArgument.
  void add_items(const std::vector<ReviewItem>& items);

  /// Throws UnknownItem, StepOutOfRange, InvalidArgument, and
  /// AlreadyResolved unless the item is pending or `supersede` is set.
  ReviewItem record_verdict(const VerdictRequest& request);

  ReviewItem get(const std::string& item_id) const;
  QueuePage queue_snapshot(const QueueFilter& filter = {}) const;
  AgreementStats stats() const;
  std::size_t size() const;

  /// Current outcomes of every item, keyed by item id.
  std::map<std::string, ConsensusOutcome> outcomes() const;

 private:
  void apply(const Json& event);
  ReviewItem& find(const std::string& item_id);

  std::filesystem::path log_path_;
  Clock clock_;
  mutable std::shared_mutex mu_;
  std::map<std::string, ReviewItem> items_;
  std::map<std::string, std::string> added_;  // item as first logged
};

/// Source data for one queue item.
struct ReviewInputs {
  const ConsensusOutcome* outcome = nullptr;
  std::string problem_text;
  std::string gold_answer;
  std::vector<std::string> quant_steps;
  std::string quant_answer;
  std::vector<JudgeRecord> assessments;
};

ReviewItem make_review_item(const ReviewInputs& in, ReviewReason reason);

}  // namespace qdiag
