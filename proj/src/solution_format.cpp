#include "qdiag/solution_format.hpp"

#include <cctype>

#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/mathexpr.hpp"

namespace qdiag {

std::string_view to_string(FormatViolation::Reason reason) {
  switch (reason) {
    case FormatViolation::Reason::kNoStepHeaders: return "no_step_headers";
    case FormatViolation::Reason::kNonContiguous: return "non_contiguous";
    case FormatViolation::Reason::kEmptyStep: return "empty_step";
    case FormatViolation::Reason::kMissingBoxedAnswer: return "missing_boxed_answer";
  }
  return "";
}

StepMarker::StepMarker(std::string_view templ) : template_(templ) {
  auto pos = templ.find("{k}");
  if (pos == std::string_view::npos || pos + 3 > templ.size()) {
    throw Error(ErrorCode::kConfigError,
                fmt::format("step marker template '{}' lacks the {{k}} placeholder", templ));
  }
  prefix_ = std::string(templ.substr(0, pos));
  suffix_ = std::string(templ.substr(pos + 3));
}

std::optional<int> StepMarker::match(std::string_view line, std::size_t& body_offset) const {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (line.substr(i, prefix_.size()) != prefix_) return std::nullopt;
  i += prefix_.size();
  std::size_t digits_start = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == digits_start || i - digits_start > 6) return std::nullopt;
  if (line.substr(i, suffix_.size()) != suffix_) return std::nullopt;
  int index = std::stoi(std::string(line.substr(digits_start, i - digits_start)));
  body_offset = i + suffix_.size();
  return index;
}

std::string StepMarker::render(int index) const { return prefix_ + std::to_string(index) + suffix_; }

ParsedSolution parse_solution(std::string_view raw, const StepMarker& marker) {
  StepwiseSolution sol;
  sol.raw_text = std::string(raw);

  std::string preamble;
  std::vector<std::pair<int, std::string>> blocks;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t nl = raw.find('\n', pos);
    std::string_view line = raw.substr(pos, nl == std::string_view::npos ? raw.size() - pos : nl - pos);
    std::size_t body = 0;
    if (auto idx = marker.match(line, body)) {
      blocks.emplace_back(*idx, std::string(line.substr(body)));
    } else {
      std::string& target = blocks.empty() ? preamble : blocks.back().second;
      if (!target.empty() || !blocks.empty()) target += '\n';
      target += line;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }

  if (blocks.empty()) {
    return FormatViolation{FormatViolation::Reason::kNoStepHeaders, "no step headers found"};
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    int expected = static_cast<int>(i) + 1;
    if (blocks[i].first != expected) {
      return FormatViolation{
          FormatViolation::Reason::kNonContiguous,
          fmt::format("expected step {} but found step {}", expected, blocks[i].first)};
    }
  }
  sol.preamble = trim(preamble);
  for (auto& [index, text] : blocks) {
    std::string body = trim(text);
    if (body.empty()) {
      return FormatViolation{FormatViolation::Reason::kEmptyStep,
                             fmt::format("step {} has an empty body", index)};
    }
    sol.steps.push_back({index, std::move(body)});
  }
  try {
    sol.final_answer_raw = extract_boxed(raw);
  } catch (const Error& e) {
    return FormatViolation{FormatViolation::Reason::kMissingBoxedAnswer, e.what()};
  }
  return sol;
}

std::string render_solution(const StepwiseSolution& sol, const StepMarker& marker) {
  std::string out;
  if (!sol.preamble.empty()) out += sol.preamble + "\n";
  for (const auto& step : sol.steps) {
    out += marker.render(step.index) + " " + step.text + "\n";
  }
  return out;
}

const std::string& get_step(const StepwiseSolution& sol, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > sol.steps.size()) {
    throw Error(ErrorCode::kStepOutOfRange,
                fmt::format("step {} requested from a {}-step solution", k, sol.steps.size()));
  }
  return sol.steps[static_cast<std::size_t>(k) - 1].text;
}

std::string_view to_key(QuantMethod method) {
  switch (method) {
    case QuantMethod::kBf16: return "bf16";
    case QuantMethod::kAwqW4A16: return "awq_w4a16";
    case QuantMethod::kGptqW4A16: return "gptq_w4a16";
  }
  return "";
}

QuantMethod parse_quant_method(std::string_view text) {
  for (auto m : {QuantMethod::kBf16, QuantMethod::kAwqW4A16, QuantMethod::kGptqW4A16}) {
    if (text == to_key(m)) return m;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown quant_method '{}'", text));
}

void to_json(Json& j, const Transcript& t) {
  j = Json{{"case_id", t.case_id},
           {"model_id", t.model_id},
           {"quant_method", to_key(t.quant_method)},
           {"raw_output", t.raw_output}};
}

void from_json(const Json& j, Transcript& t) {
  t.case_id = j.at("case_id").is_string() ? j.at("case_id").get<std::string>()
                                          : j.at("case_id").dump();
  t.model_id = j.at("model_id").get<std::string>();
  t.quant_method = parse_quant_method(j.at("quant_method").get<std::string>());
  t.raw_output = j.at("raw_output").get<std::string>();
}

std::vector<Transcript> load_transcripts(const std::filesystem::path& path) {
  std::vector<Transcript> out;
  for (const auto& row : read_jsonl(path)) {
    try {
      out.push_back(row.get<Transcript>());
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kIoFailure, fmt::format("{}: bad transcript row: {}", path.string(), e.what()));
    }
  }
  return out;
}

}  // namespace qdiag
