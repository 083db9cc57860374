#include "qdiag/scoring.hpp"

#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/mathexpr.hpp"

namespace qdiag {

namespace {

std::string string_field(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  const Json& v = j.at(key);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace

void to_json(Json& j, const GoldRecord& g) {
  j = Json{{"case_id", g.case_id},
           {"problem_text", g.problem_text},
           {"gold_answer", g.gold_answer},
           {"level", g.level},
           {"subject", g.subject}};
}

void from_json(const Json& j, GoldRecord& g) {
  g.case_id = string_field(j, "case_id");
  g.problem_text = string_field(j, "problem_text");
  g.gold_answer = string_field(j, "gold_answer");
  g.level = string_field(j, "level");
  g.subject = string_field(j, "subject");
  if (g.case_id.empty()) throw Error(ErrorCode::kIoFailure, "gold record without case_id");
}

GoldSet load_gold(const std::filesystem::path& path) {
  GoldSet gold;
  for (const auto& row : read_jsonl(path)) {
    auto rec = row.get<GoldRecord>();
    std::string id = rec.case_id;
    if (!gold.emplace(id, std::move(rec)).second) {
      throw Error(ErrorCode::kIoFailure, fmt::format("{}: duplicate gold case {}", path.string(), id));
    }
  }
  return gold;
}

std::string_view to_key(CaseStatus status) {
  switch (status) {
    case CaseStatus::kCorrect: return "correct";
    case CaseStatus::kWrongAnswer: return "wrong_answer";
    case CaseStatus::kFormatViolation: return "format_violation";
    case CaseStatus::kMissing: return "missing";
  }
  return "";
}

CaseStatus parse_case_status(std::string_view text) {
  for (auto s : {CaseStatus::kCorrect, CaseStatus::kWrongAnswer, CaseStatus::kFormatViolation,
                 CaseStatus::kMissing}) {
    if (text == to_key(s)) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown case status '{}'", text));
}

void to_json(Json& j, const ScoreReport& r) {
  Json cases = Json::object();
  for (const auto& [id, c] : r.per_case) {
    Json entry{{"correct", c.correct}, {"status", to_key(c.status)}};
    if (!c.final_answer.empty()) entry["final_answer"] = c.final_answer;
    if (!c.detail.empty()) entry["detail"] = c.detail;
    cases[id] = std::move(entry);
  }
  j = Json{{"model_id", r.model_id},
           {"quant_method", to_key(r.quant_method)},
           {"total", r.total},
           {"correct", r.correct},
           {"format_violations", r.format_violations},
           {"accuracy", r.accuracy.to_double()},
           {"accuracy_text", r.accuracy.fixed2()},
           {"per_case", std::move(cases)}};
}

void from_json(const Json& j, ScoreReport& r) {
  r.model_id = j.value("model_id", "");
  r.quant_method = parse_quant_method(j.value("quant_method", "bf16"));
  r.total = j.value("total", std::size_t{0});
  r.correct = j.value("correct", std::size_t{0});
  r.format_violations = j.value("format_violations", std::size_t{0});
  r.accuracy = j.contains("accuracy_text") ? Percent::parse(j.at("accuracy_text").get<std::string>())
                                           : Percent::from_double(j.at("accuracy").get<double>());
  r.per_case.clear();
  if (j.contains("per_case")) {
    for (const auto& [id, c] : j.at("per_case").items()) {
      CaseScore cs;
      cs.correct = c.at("correct").get<bool>();
      cs.status = parse_case_status(c.at("status").get<std::string>());
      cs.final_answer = c.value("final_answer", "");
      cs.detail = c.value("detail", "");
      r.per_case.emplace(id, std::move(cs));
    }
  }
}

ScoreReport score_predictions(const std::string& model_id, QuantMethod quant,
                              std::span<const Transcript> transcripts, const GoldSet& gold,
                              const StepMarker& marker) {
  ScoreReport report;
  report.model_id = model_id;
  report.quant_method = quant;

  std::map<std::string, const Transcript*> by_case;
  for (const auto& t : transcripts) {
    if (t.model_id != model_id || t.quant_method != quant) {
      throw Error(ErrorCode::kConfigError,
                  fmt::format("transcript {} is for {}/{}, expected {}/{}", t.case_id, t.model_id,
                              to_key(t.quant_method), model_id, to_key(quant)));
    }
    if (!gold.contains(t.case_id)) throw Error(ErrorCode::kMissingGold, t.case_id);
    if (!by_case.emplace(t.case_id, &t).second) {
      throw Error(ErrorCode::kDuplicateTranscript, fmt::format("{} ({})", t.case_id, t.model_id));
    }
  }

  for (const auto& [case_id, rec] : gold) {
    CaseScore score;
    auto it = by_case.find(case_id);
    if (it == by_case.end()) {
      score.status = CaseStatus::kMissing;
    } else {
      auto parsed = parse_solution(it->second->raw_output, marker);
      if (auto* v = std::get_if<FormatViolation>(&parsed)) {
        score.status = CaseStatus::kFormatViolation;
        score.detail = std::string(to_string(v->reason));
        ++report.format_violations;
      } else {
        const auto& sol = std::get<StepwiseSolution>(parsed);
        score.final_answer = sol.final_answer_raw;
        auto eq = check_equivalence(sol.final_answer_raw, rec.gold_answer);
        score.correct = eq.equivalent;
        score.status = eq.equivalent ? CaseStatus::kCorrect : CaseStatus::kWrongAnswer;
        if (!eq.diagnostics.empty()) score.detail = eq.diagnostics.front();
      }
    }
    if (score.correct) ++report.correct;
    report.per_case.emplace(case_id, std::move(score));
  }
  report.total = gold.size();
  report.accuracy = report.total == 0
                        ? Percent()
                        : Percent::ratio(static_cast<std::int64_t>(report.correct),
                                         static_cast<std::int64_t>(report.total));
  return report;
}

std::map<TranscriptKey, std::vector<Transcript>> group_transcripts(std::span<const Transcript> all) {
  std::map<TranscriptKey, std::vector<Transcript>> groups;
  for (const auto& t : all) groups[{t.model_id, t.quant_method}].push_back(t);
  return groups;
}

std::string DegradationDelta::render() const {
  if (delta_abs < Percent()) return fmt::format("↑{}({}%)", (-delta_abs).compact(), (-delta_pct).fixed2());
  return fmt::format("↓{}({}%)", delta_abs.compact(), delta_pct.fixed2());
}

void to_json(Json& j, const DegradationDelta& d) {
  j = Json{{"baseline_accuracy", d.baseline_accuracy.to_double()},
           {"quant_accuracy", d.quant_accuracy.to_double()},
           {"delta_abs", d.delta_abs.to_double()},
           {"delta_pct", d.delta_pct.to_double()},
           {"rendered", d.render()}};
}

DegradationDelta degradation_delta(Percent baseline, Percent quant) {
  if (baseline.hundredths() == 0) throw Error(ErrorCode::kBaselineZero, "baseline accuracy is 0");
  DegradationDelta d;
  d.baseline_accuracy = baseline;
  d.quant_accuracy = quant;
  d.delta_abs = baseline - quant;
  // delta_abs / baseline * 100, both in hundredths.
  d.delta_pct = Percent::from_hundredths(
      div_round_half_away(d.delta_abs.hundredths() * 10000, baseline.hundredths()));
  return d;
}

DegradationDelta degradation_delta(const ScoreReport& baseline, const ScoreReport& quant) {
  return degradation_delta(baseline.accuracy, quant.accuracy);
}

std::set<std::string> extract_failures(const ScoreReport& fp, const ScoreReport& quant) {
  std::vector<std::string> diff;
  for (const auto& [id, _] : fp.per_case) {
    if (!quant.per_case.contains(id)) diff.push_back(id);
  }
  for (const auto& [id, _] : quant.per_case) {
    if (!fp.per_case.contains(id)) diff.push_back(id);
  }
  if (!diff.empty()) {
    throw Error(ErrorCode::kUniverseMismatch, fmt::format("{}", fmt::join(diff, ",")));
  }
  std::set<std::string> failures;
  for (const auto& [id, score] : fp.per_case) {
    if (score.correct && !quant.per_case.at(id).correct) failures.insert(id);
  }
  return failures;
}

}  // namespace qdiag
