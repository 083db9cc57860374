#include "qdiag/review.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <mutex>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/io.hpp"
#include "qdiag/mathexpr.hpp"
#include "qdiag/rng.hpp"

namespace qdiag {

namespace fs = std::filesystem;

std::string_view to_key(ReviewReason reason) {
  return reason == ReviewReason::kConflict ? "conflict" : "audit_sample";
}

std::string_view to_key(ReviewState state) { return state == ReviewState::kPending ? "pending" : "resolved"; }

ReviewReason parse_review_reason(std::string_view text) {
  if (text == "conflict") return ReviewReason::kConflict;
  if (text == "audit_sample") return ReviewReason::kAuditSample;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown review reason '{}'", text));
}

ReviewState parse_review_state(std::string_view text) {
  if (text == "pending") return ReviewState::kPending;
  if (text == "resolved") return ReviewState::kResolved;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown review state '{}'", text));
}

std::string review_item_id(const ConsensusOutcome& outcome) {
  return fmt::format("{}:{}:{}", outcome.model_id, to_key(outcome.quant_method), outcome.case_id);
}

void to_json(Json& j, const VerdictEntry& e) {
  j = Json{{"verdict", e.verdict}, {"supersedes", e.supersedes}, {"rejected", e.rejected}};
}

void from_json(const Json& j, VerdictEntry& e) {
  e.verdict = j.at("verdict").get<HumanVerdict>();
  e.supersedes = j.value("supersedes", false);
  e.rejected = j.value("rejected", false);
}

void to_json(Json& j, const ReviewItem& item) {
  j = Json{{"item_id", item.item_id},
           {"case_id", item.case_id()},
           {"model_id", item.outcome.model_id},
           {"quant_method", to_key(item.outcome.quant_method)},
           {"reason", to_key(item.reason)},
           {"problem_text", item.problem_text},
           {"gold_answer", item.gold_answer},
           {"quant_steps", item.quant_steps},
           {"quant_answer", item.quant_answer},
           {"assessments", item.assessments},
           {"outcome", item.outcome},
           {"automated_label",
            item.automated_label ? Json(std::string(to_key(*item.automated_label))) : Json(nullptr)},
           {"state", to_key(item.state)},
           {"verdict", item.verdict ? Json(*item.verdict) : Json(nullptr)},
           {"history", item.history}};
}

void from_json(const Json& j, ReviewItem& item) {
  item.item_id = j.at("item_id").get<std::string>();
  item.reason = parse_review_reason(j.at("reason").get<std::string>());
  item.problem_text = j.at("problem_text").get<std::string>();
  item.gold_answer = j.at("gold_answer").get<std::string>();
  item.quant_steps = j.at("quant_steps").get<std::vector<std::string>>();
  item.quant_answer = j.at("quant_answer").get<std::string>();
  item.assessments = j.at("assessments").get<std::vector<JudgeRecord>>();
  item.outcome = j.at("outcome").get<ConsensusOutcome>();
  const Json& al = j.at("automated_label");
  item.automated_label = al.is_null() ? std::nullopt
                                      : std::optional<ErrorLabel>(parse_error_label(al.get<std::string>()));
  item.state = parse_review_state(j.at("state").get<std::string>());
  const Json& v = j.at("verdict");
  item.verdict = v.is_null() ? std::nullopt : std::optional<HumanVerdict>(v.get<HumanVerdict>());
  item.history = j.value("history", std::vector<VerdictEntry>{});
}

std::optional<Percent> AgreementStats::agreement_rate() const {
  if (audited == 0) return std::nullopt;
  return Percent::ratio(matches, audited);
}

void to_json(Json& j, const AgreementStats& s) {
  auto rate = s.agreement_rate();
  j = Json{{"audited", s.audited},
           {"matches", s.matches},
           {"agreement_rate", rate ? Json(rate->fixed2()) : Json(nullptr)}};
}

std::vector<std::string> sample_for_review(std::vector<std::string> cases, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("sampling rate {} outside (0, 1]", rate));
  }
  if (cases.empty()) throw Error(ErrorCode::kEmptyPool, "no accepted cases to sample");
  std::sort(cases.begin(), cases.end());
  std::size_t k = ceil_fraction_of(rate, cases.size());
  seeded_shuffle(std::span<std::string>(cases), seed);
  cases.resize(k);
  std::sort(cases.begin(), cases.end());
  return cases;
}

ReviewItem make_review_item(const ReviewInputs& in, ReviewReason reason) {
  if (in.outcome == nullptr) throw Error(ErrorCode::kInvalidArgument, "review item without outcome");
  const ConsensusOutcome& o = *in.outcome;
  if (reason == ReviewReason::kConflict && o.status != OutcomeStatus::kFlagged) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("conflict item for unflagged case {}", o.case_key()));
  }
  if (reason == ReviewReason::kAuditSample && o.status != OutcomeStatus::kAccepted) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("audit item for unaccepted case {}", o.case_key()));
  }
  ReviewItem item;
  item.item_id = review_item_id(o);
  item.reason = reason;
  item.problem_text = in.problem_text;
  item.gold_answer = in.gold_answer;
  item.quant_steps = in.quant_steps;
  item.quant_answer = in.quant_answer;
  item.assessments = in.assessments;
  item.outcome = o;
  item.outcome.audit_sampled = reason == ReviewReason::kAuditSample;
  item.automated_label = o.final_label;
  return item;
}

namespace {

std::string utc_now() {
  auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

// Drops a torn final line left by a crash mid-append.
std::vector<Json> load_events(const fs::path& path) {
  std::vector<Json> events;
  if (!fs::exists(path)) return events;
  std::string data = read_file(path);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < data.size()) {
    std::size_t nl = data.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) {
      if (::truncate(path.c_str(), static_cast<off_t>(pos)) != 0) {
        throw Error(ErrorCode::kIoFailure, fmt::format("cannot truncate {}", path.string()));
      }
      break;
    }
    std::string_view line(data.data() + pos, nl - pos);
    pos = nl + 1;
    if (trim(line).empty()) continue;
    try {
      events.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kCorruptRun, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return events;
}

}  // namespace

ReviewStore::ReviewStore(fs::path dir, Clock clock)
    : log_path_(dir / "events.jsonl"), clock_(clock ? std::move(clock) : Clock(utc_now)) {
  fs::create_directories(dir);
  for (const Json& ev : load_events(log_path_)) {
    try {
      apply(ev);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kCorruptRun, fmt::format("{}: {}", log_path_.string(), e.what()));
    }
  }
}

ReviewItem& ReviewStore::find(const std::string& item_id) {
  auto it = items_.find(item_id);
  if (it == items_.end()) throw Error(ErrorCode::kUnknownItem, item_id);
  return it->second;
}

void ReviewStore::apply(const Json& event) {
  const std::string type = event.at("event").get<std::string>();
  if (type == "item") {
    ReviewItem item = event.at("item").get<ReviewItem>();
    std::string id = item.item_id;
    added_[id] = event.at("item").dump();
    items_.insert_or_assign(id, std::move(item));
    return;
  }
  ReviewItem& item = find(event.at("item_id").get<std::string>());
  VerdictEntry entry;
  entry.verdict = event.at("verdict").get<HumanVerdict>();
  if (type == "rejected") {
    entry.rejected = true;
    item.history.push_back(entry);
    return;
  }
  if (type != "verdict") throw Error(ErrorCode::kCorruptRun, fmt::format("unknown event '{}'", type));
  entry.supersedes = event.value("supersedes", false);
  item.outcome = resolve_with_human(item.outcome, entry.verdict, equivalent(item.quant_answer, item.gold_answer));
  item.verdict = entry.verdict;
  item.state = ReviewState::kResolved;
  item.history.push_back(entry);
}

void ReviewStore::add_items(const std::vector<ReviewItem>& items) {
  std::unique_lock lock(mu_);
  for (const ReviewItem& item : items) {
    Json fresh = item;
    auto it = added_.find(item.item_id);
    if (it != added_.end()) {
      if (it->second != fresh.dump()) {
        throw Error(ErrorCode::kInvalidArgument, fmt::format("conflicting item {}", item.item_id));
      }
      continue;
    }
    Json ev{{"event", "item"}, {"item", fresh}};
    append_jsonl(log_path_, ev);
    apply(ev);
  }
}

ReviewItem ReviewStore::record_verdict(const VerdictRequest& req) {
  std::unique_lock lock(mu_);
  ReviewItem& item = find(req.item_id);
  if (req.reviewer_id.empty()) throw Error(ErrorCode::kInvalidArgument, "reviewer_id is required");
  if (req.step) {
    if (req.label == ErrorLabel::kNoError) {
      throw Error(ErrorCode::kInvalidArgument, "no_error verdict cannot name a step");
    }
    if (*req.step < 1 || static_cast<std::size_t>(*req.step) > item.quant_steps.size()) {
      throw Error(ErrorCode::kStepOutOfRange,
                  fmt::format("step {} outside [1, {}]", *req.step, item.quant_steps.size()));
    }
  }
  HumanVerdict v{req.label, req.step, req.reviewer_id, clock_()};
  if (item.state == ReviewState::kResolved && !req.supersede) {
    Json ev{{"event", "rejected"}, {"item_id", req.item_id}, {"verdict", v}};
    append_jsonl(log_path_, ev);
    apply(ev);
    throw Error(ErrorCode::kAlreadyResolved,
                fmt::format("{} resolved by {}", req.item_id, item.verdict->reviewer_id));
  }
  Json ev{{"event", "verdict"},
          {"item_id", req.item_id},
          {"verdict", v},
          {"supersedes", item.state == ReviewState::kResolved}};
  append_jsonl(log_path_, ev);
  apply(ev);
  return item;
}

ReviewItem ReviewStore::get(const std::string& item_id) const {
  std::shared_lock lock(mu_);
  auto it = items_.find(item_id);
  if (it == items_.end()) throw Error(ErrorCode::kUnknownItem, item_id);
  return it->second;
}

QueuePage ReviewStore::queue_snapshot(const QueueFilter& filter) const {
  std::shared_lock lock(mu_);
  std::vector<const ReviewItem*> hits;
  for (const auto& [id, item] : items_) {
    if (filter.state && item.state != *filter.state) continue;
    if (filter.reason && item.reason != *filter.reason) continue;
    hits.push_back(&item);
  }
  std::sort(hits.begin(), hits.end(), [](const ReviewItem* a, const ReviewItem* b) {
    return std::tie(a->reason, a->case_id(), a->item_id) < std::tie(b->reason, b->case_id(), b->item_id);
  });
  QueuePage page;
  page.total = hits.size();
  for (std::size_t i = filter.offset; i < hits.size() && page.items.size() < filter.limit; ++i) {
    page.items.push_back(*hits[i]);
  }
  return page;
}

AgreementStats ReviewStore::stats() const {
  std::shared_lock lock(mu_);
  AgreementStats s;
  for (const auto& [id, item] : items_) {
    if (item.reason != ReviewReason::kAuditSample || !item.verdict) continue;
    ++s.audited;
    if (item.automated_label && item.verdict->label == *item.automated_label) ++s.matches;
  }
  return s;
}

std::size_t ReviewStore::size() const {
  std::shared_lock lock(mu_);
  return items_.size();
}

std::map<std::string, ConsensusOutcome> ReviewStore::outcomes() const {
  std::shared_lock lock(mu_);
  std::map<std::string, ConsensusOutcome> out;
  for (const auto& [id, item] : items_) out.emplace(id, item.outcome);
  return out;
}

}  // namespace qdiag
