#include "qdiag/curation.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/mathexpr.hpp"
#include "qdiag/rng.hpp"

namespace qdiag {

std::string_view to_key(ModelScale scale) {
  switch (scale) {
    case ModelScale::k1B: return "1B";
    case ModelScale::k3B: return "3B";
    case ModelScale::k8B: return "8B";
  }
  return "?";
}

ModelScale parse_model_scale(std::string_view text) {
  if (text == "1B" || text == "1b") return ModelScale::k1B;
  if (text == "3B" || text == "3b") return ModelScale::k3B;
  if (text == "8B" || text == "8b") return ModelScale::k8B;
  throw Error(ErrorCode::kConfigError, fmt::format("unknown model scale '{}'", text));
}

void to_json(Json& j, const FailureCase& c) {
  j = Json{{"case_id", c.case_id},
           {"model_id", c.model_id},
           {"model_scale", to_key(c.model_scale)},
           {"quant_method", to_key(c.quant_method)},
           {"final_label", to_key(c.final_label)},
           {"consensus_step", c.consensus_step},
           {"vote_margin", c.vote_margin},
           {"fp_solution", c.fp_solution.raw_text},
           {"quant_solution", c.quant_solution.raw_text},
           {"problem_text", c.problem_text},
           {"gold_answer", c.gold_answer},
           {"level", c.level}};
}

namespace {

StepwiseSolution parse_or_throw(const std::string& raw, const std::string& case_id) {
  auto parsed = parse_solution(raw);
  if (is_violation(parsed)) {
    throw Error(ErrorCode::kParseFailure,
                fmt::format("case {}: {}", case_id, std::get<FormatViolation>(parsed).detail));
  }
  return std::get<StepwiseSolution>(std::move(parsed));
}

}  // namespace

void from_json(const Json& j, FailureCase& c) {
  c.case_id = j.at("case_id").get<std::string>();
  c.model_id = j.value("model_id", "");
  c.model_scale = parse_model_scale(j.at("model_scale").get<std::string>());
  c.quant_method = parse_quant_method(j.at("quant_method").get<std::string>());
  c.final_label = parse_error_label(j.at("final_label").get<std::string>());
  if (c.final_label == ErrorLabel::kNoError) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("case {}: no_error in failure pool", c.case_id));
  }
  c.consensus_step = j.value("consensus_step", 1);
  c.vote_margin = j.value("vote_margin", 0);
  c.fp_solution = parse_or_throw(j.at("fp_solution").get<std::string>(), c.case_id);
  c.quant_solution = parse_or_throw(j.at("quant_solution").get<std::string>(), c.case_id);
  c.problem_text = j.at("problem_text").get<std::string>();
  c.gold_answer = j.at("gold_answer").get<std::string>();
  c.level = j.value("level", "");
}

std::vector<FailureCase> load_failure_pool(const std::filesystem::path& path) {
  std::vector<FailureCase> out;
  for (const Json& row : read_jsonl(path)) out.push_back(row.get<FailureCase>());
  return out;
}

void TranscriptIndex::add(const Transcript& t) {
  if (!by_key_.emplace(std::make_tuple(t.model_id, t.quant_method, t.case_id), t).second) {
    throw Error(ErrorCode::kDuplicateTranscript,
                fmt::format("{}/{}/{}", t.model_id, to_key(t.quant_method), t.case_id));
  }
}

void TranscriptIndex::add_all(std::span<const Transcript> ts) {
  for (const auto& t : ts) add(t);
}

const Transcript* TranscriptIndex::find(const std::string& model_id, QuantMethod quant,
                                        const std::string& case_id) const {
  auto it = by_key_.find(std::make_tuple(model_id, quant, case_id));
  return it == by_key_.end() ? nullptr : &it->second;
}

FailurePool build_failure_pool(std::span<const ConsensusOutcome> outcomes, const TranscriptIndex& transcripts,
                               const GoldSet& gold, const std::map<std::string, ModelScale>& scales,
                               const StepMarker& marker) {
  FailurePool pool;
  for (const ConsensusOutcome& o : outcomes) {
    if (o.status != OutcomeStatus::kAccepted || !o.final_label || *o.final_label == ErrorLabel::kNoError) continue;
    auto scale = scales.find(o.model_id);
    if (scale == scales.end()) throw Error(ErrorCode::kConfigError, fmt::format("no scale for model {}", o.model_id));
    auto g = gold.find(o.case_id);
    if (g == gold.end()) throw Error(ErrorCode::kMissingGold, o.case_id);
    const Transcript* fp = transcripts.find(o.model_id, QuantMethod::kBf16, o.case_id);
    if (!fp) throw Error(ErrorCode::kMissingTranscript, fmt::format("{} (full precision)", o.case_key()));
    const Transcript* qt = transcripts.find(o.model_id, o.quant_method, o.case_id);
    if (!qt) throw Error(ErrorCode::kMissingTranscript, fmt::format("{} (quantized)", o.case_key()));

    auto exclude = [&](std::string reason) { pool.excluded.push_back({o.case_key(), std::move(reason)}); };
    auto fp_parsed = parse_solution(fp->raw_output, marker);
    auto qt_parsed = parse_solution(qt->raw_output, marker);
    if (is_violation(fp_parsed)) {
      exclude("full-precision solution breaks the step format");
      continue;
    }
    if (is_violation(qt_parsed)) {
      exclude("quantized solution breaks the step format");
      continue;
    }
    auto& fs = std::get<StepwiseSolution>(fp_parsed);
    auto& qs = std::get<StepwiseSolution>(qt_parsed);
    if (!equivalent(fs.final_answer_raw, g->second.gold_answer)) {
      exclude("full-precision answer not equivalent to gold");
      continue;
    }
    if (equivalent(qs.final_answer_raw, g->second.gold_answer)) {
      exclude("quantized answer equivalent to gold");
      continue;
    }
    FailureCase c;
    c.case_id = o.case_id;
    c.model_id = o.model_id;
    c.model_scale = scale->second;
    c.quant_method = o.quant_method;
    c.final_label = *o.final_label;
    c.consensus_step = o.consensus_step.value_or(1);
    c.vote_margin = o.vote_margin;
    c.fp_solution = std::move(fs);
    c.quant_solution = std::move(qs);
    c.problem_text = g->second.problem_text;
    c.gold_answer = g->second.gold_answer;
    c.level = g->second.level;
    pool.cases.push_back(std::move(c));
  }
  return pool;
}

std::vector<FailureCase> deduplicate(std::vector<FailureCase> pool) {
  auto better = [](const FailureCase& a, const FailureCase& b) {
    if (a.vote_margin != b.vote_margin) return a.vote_margin > b.vote_margin;
    if (a.model_scale != b.model_scale) return a.model_scale > b.model_scale;
    if (a.quant_method != b.quant_method) return to_key(a.quant_method) < to_key(b.quant_method);
    return a.model_id < b.model_id;
  };
  std::map<std::string, FailureCase> keep;
  for (auto& c : pool) {
    auto it = keep.find(c.case_id);
    if (it == keep.end()) {
      std::string id = c.case_id;
      keep.emplace(id, std::move(c));
    } else if (better(c, it->second)) {
      it->second = std::move(c);
    }
  }
  std::vector<FailureCase> out;
  out.reserve(keep.size());
  for (auto& [id, c] : keep) out.push_back(std::move(c));
  return out;
}

std::map<ErrorCategory, std::size_t> allocate_quota(const std::map<ErrorCategory, std::size_t>& pool,
                                                    std::size_t target) {
  std::size_t total = 0;
  for (const auto& [cat, n] : pool) total += n;
  if (target > total) {
    throw Error(ErrorCode::kTargetExceedsPool, fmt::format("target {} exceeds pool of {}", target, total));
  }
  std::map<ErrorCategory, std::size_t> quota;
  if (total == 0) return quota;

  struct Share {
    ErrorCategory cat;
    std::size_t count;
    std::size_t remainder;  // numerator over `total`
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  for (const auto& [cat, n] : pool) {
    std::size_t whole = target * n / total;
    quota[cat] = whole;
    assigned += whole;
    shares.push_back({cat, n, target * n % total});
  }
  std::sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
    if (a.remainder != b.remainder) return a.remainder > b.remainder;
    if (a.count != b.count) return a.count > b.count;
    return a.cat < b.cat;
  });
  for (std::size_t i = 0; assigned < target; ++i, ++assigned) quota[shares[i].cat] += 1;

  std::size_t nonzero = std::count_if(pool.begin(), pool.end(), [](const auto& kv) { return kv.second > 0; });
  if (target >= nonzero) {
    for (const auto& [cat, n] : pool) {
      if (n == 0 || quota[cat] > 0) continue;
      auto donor = std::max_element(quota.begin(), quota.end(),
                                    [](const auto& a, const auto& b) { return a.second < b.second; });
      donor->second -= 1;
      quota[cat] = 1;
    }
  }
  return quota;
}

std::map<ErrorCategory, std::size_t> category_counts(std::span<const FailureCase> pool) {
  std::map<ErrorCategory, std::size_t> counts;
  for (ErrorCategory c : kAllCategories) counts[c] = 0;
  for (const auto& fc : pool) ++counts[fc.category()];
  return counts;
}

std::vector<FailureCase> select_cases(std::span<const FailureCase> pool,
                                      const std::map<ErrorCategory, std::size_t>& quota, std::uint64_t seed) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  auto id_less = [&](std::size_t a, std::size_t b) {
    const auto& x = pool[a];
    const auto& y = pool[b];
    return std::tie(x.case_id, x.model_id, x.quant_method) < std::tie(y.case_id, y.model_id, y.quant_method);
  };
  std::sort(order.begin(), order.end(), id_less);
  seeded_shuffle(std::span<std::size_t>(order), seed);
  std::vector<std::size_t> tie_rank(pool.size());
  for (std::size_t r = 0; r < order.size(); ++r) tie_rank[order[r]] = r;

  std::vector<FailureCase> out;
  for (ErrorCategory cat : kAllCategories) {
    auto q = quota.find(cat);
    if (q == quota.end() || q->second == 0) continue;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool[i].category() == cat) members.push_back(i);
    }
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = pool[a];
      const auto& y = pool[b];
      if (x.vote_margin != y.vote_margin) return x.vote_margin > y.vote_margin;
      if (x.consensus_step != y.consensus_step) return x.consensus_step < y.consensus_step;
      return tie_rank[a] < tie_rank[b];
    });
    members.resize(std::min(members.size(), q->second));
    for (std::size_t i : members) out.push_back(pool[i]);
  }
  return out;
}

std::string_view to_key(AblationSetting s) {
  switch (s) {
    case AblationSetting::kAll: return "setting0_all";
    case AblationSetting::kConceptual: return "setting1_conceptual";
    case AblationSetting::kMethod: return "setting2_method";
    case AblationSetting::kExecution: return "setting3_execution";
  }
  return "?";
}

AblationSetting ablation_setting_from_id(int id) {
  switch (id) {
    case 0: return AblationSetting::kAll;
    case 1: return AblationSetting::kConceptual;
    case 2: return AblationSetting::kMethod;
    case 3: return AblationSetting::kExecution;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("setting {} outside 0..3", id));
}

std::optional<ErrorCategory> category_filter(AblationSetting s) {
  switch (s) {
    case AblationSetting::kAll: return std::nullopt;
    case AblationSetting::kConceptual: return ErrorCategory::kConceptual;
    case AblationSetting::kMethod: return ErrorCategory::kMethod;
    case AblationSetting::kExecution: return ErrorCategory::kExecution;
  }
  return std::nullopt;
}

void to_json(Json& j, const PreferencePair& p) {
  j = Json{{"prompt", p.prompt},
           {"chosen", p.chosen},
           {"rejected", p.rejected},
           {"case_id", p.case_id},
           {"model_id", p.model_id},
           {"error_label", to_key(p.error_label)},
           {"category", to_key(*category_of(p.error_label))},
           {"model_scale", to_key(p.model_scale)},
           {"quant_method", to_key(p.quant_method)},
           {"difficulty", p.difficulty},
           {"consensus_step", p.consensus_step},
           {"vote_margin", p.vote_margin}};
}

std::vector<PreferencePair> build_preference_pairs(std::span<const FailureCase> selected,
                                                   AblationSetting setting, std::string_view system_prompt) {
  auto filter = category_filter(setting);
  std::vector<PreferencePair> pairs;
  for (const FailureCase& c : selected) {
    if (filter && c.category() != *filter) continue;
    std::string key = fmt::format("{}/{}/{}", c.model_id, to_key(c.quant_method), c.case_id);
    if (c.final_label == ErrorLabel::kNoError) {
      throw Error(ErrorCode::kInvariantViolation, fmt::format("{}: no_error label in failure pool", key));
    }
    if (!equivalent(c.fp_solution.final_answer_raw, c.gold_answer)) {
      throw Error(ErrorCode::kInvariantViolation, fmt::format("{}: chosen answer not equivalent to gold", key));
    }
    if (equivalent(c.quant_solution.final_answer_raw, c.gold_answer)) {
      throw Error(ErrorCode::kInvariantViolation, fmt::format("{}: rejected answer equivalent to gold", key));
    }
    if (c.fp_solution.raw_text == c.quant_solution.raw_text) {
      throw Error(ErrorCode::kInvariantViolation, fmt::format("{}: chosen and rejected identical", key));
    }
    PreferencePair p;
    p.prompt = fmt::format("{}\n\n{}", system_prompt, c.problem_text);
    p.chosen = c.fp_solution.raw_text;
    p.rejected = c.quant_solution.raw_text;
    p.case_id = c.case_id;
    p.model_id = c.model_id;
    p.error_label = c.final_label;
    p.model_scale = c.model_scale;
    p.quant_method = c.quant_method;
    p.difficulty = c.level;
    p.consensus_step = c.consensus_step;
    p.vote_margin = c.vote_margin;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

EmitResult emit_preference_pairs(std::span<const FailureCase> selected, AblationSetting setting,
                                 std::string_view system_prompt, const std::filesystem::path& out_path) {
  auto pairs = build_preference_pairs(selected, setting, system_prompt);
  std::vector<Json> rows(pairs.begin(), pairs.end());
  write_jsonl_atomic(out_path, rows);
  EmitResult r;
  r.count = rows.size();
  if (rows.empty()) r.warnings.push_back(fmt::format("{} selected no cases", to_key(setting)));
  return r;
}

Json emit_training_recipe(AblationSetting setting, const std::string& dataset_path) {
  return Json{{"method", "dpo"},
              {"adapter", "qlora"},
              {"lora_rank", 32},
              {"preference_loss", "sigmoid"},
              {"global_batch_size", 8},
              {"learning_rate", 1e-6},
              {"warmup_ratio", 0.1},
              {"lr_schedule", "cosine"},
              {"epochs", 3},
              {"sequence_length", 1024},
              {"setting", to_key(setting)},
              {"dataset", dataset_path}};
}

}  // namespace qdiag
