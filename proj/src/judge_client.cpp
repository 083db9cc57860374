#include "qdiag/judge_client.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "httplib.h"

namespace qdiag {

namespace {

constexpr const char* kChatPath = "/v1/chat/completions";

double number_or(const Json& v, double fallback) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      return std::stod(v.get<std::string>());
    } catch (...) {
      return fallback;
    }
  }
  return fallback;
}

}  // namespace

const char* const kJudgeSystemPrompt =
    "You are a meticulous mathematics grader. You locate the first erroneous step in a "
    "worked solution and classify the error. You answer with JSON only.";

void to_json(Json& j, const JudgeSpec& s) {
  j = Json{{"judge_id", s.judge_id},         {"endpoint_url", s.endpoint_url},
           {"model_name", s.model_name},     {"api_key_env", s.api_key_env},
           {"is_baseline", s.is_baseline},   {"max_parallel", s.max_parallel},
           {"timeout_s", s.timeout_s},       {"max_retries", s.max_retries},
           {"backoff_base_ms", s.backoff_base_ms}};
}

void from_json(const Json& j, JudgeSpec& s) {
  s.judge_id = j.at("judge_id").get<std::string>();
  s.endpoint_url = j.at("endpoint_url").get<std::string>();
  s.model_name = j.value("model_name", s.judge_id);
  s.api_key_env = j.value("api_key_env", "");
  s.is_baseline = j.value("is_baseline", false);
  s.max_parallel = j.value("max_parallel", 4);
  s.timeout_s = j.value("timeout_s", 60.0);
  s.max_retries = j.value("max_retries", 3);
  s.backoff_base_ms = j.value("backoff_base_ms", 1000);
  if (s.max_parallel < 1) throw Error(ErrorCode::kConfigError, s.judge_id + ": max_parallel must be >= 1");
  if (s.max_retries < 0) throw Error(ErrorCode::kConfigError, s.judge_id + ": max_retries must be >= 0");
}

JudgePanel::JudgePanel(std::vector<JudgeSpec> judges) : judges_(std::move(judges)) {
  if (judges_.empty()) throw Error(ErrorCode::kConfigError, "judge panel is empty");
  std::set<std::string> ids;
  int baselines = 0;
  for (const auto& j : judges_) {
    if (!ids.insert(j.judge_id).second) {
      throw Error(ErrorCode::kConfigError, fmt::format("duplicate judge id '{}'", j.judge_id));
    }
    if (j.is_baseline) ++baselines;
  }
  if (baselines != 1) {
    throw Error(ErrorCode::kConfigError,
                fmt::format("panel needs exactly one baseline judge, found {}", baselines));
  }
}

const JudgeSpec& JudgePanel::baseline() const {
  for (const auto& j : judges_) {
    if (j.is_baseline) return j;
  }
  throw Error(ErrorCode::kMissingBaseline, "panel has no baseline judge");
}

JudgePanel panel_from_json(const Json& j) {
  const Json& arr = j.is_object() ? j.at("judges") : j;
  return JudgePanel(arr.get<std::vector<JudgeSpec>>());
}

Json panel_to_json(const JudgePanel& panel) { return Json{{"judges", panel.judges()}}; }

// ---------------------------------------------------------------------------
// Reply parsing

namespace {

// First balanced {...} that parses as a JSON object.
std::optional<Json> first_json_object(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos;
       start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
      char c = raw[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        auto parsed = Json::parse(raw.substr(start, i - start + 1), nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
        break;
      }
    }
  }
  return std::nullopt;
}

[[noreturn]] void parse_failure(std::string_view raw, const std::string& why) {
  throw JudgeReplyError(ErrorCode::kParseFailure, why, std::string(raw));
}

}  // namespace

AssessmentFields parse_assessment(std::string_view raw, std::size_t step_count) {
  AssessmentFields out;
  auto obj = first_json_object(raw);
  if (!obj) {
    static const std::regex no_errors(R"(\bno[\s_-]+errors?\b)", std::regex::icase);
    std::string text(raw);
    if (std::regex_search(text, no_errors)) {
      out.error_label = ErrorLabel::kNoError;
      out.confidence = 0.5;
      out.explanation = trim(text);
      return out;
    }
    parse_failure(raw, "reply contains no JSON object");
  }

  const Json* label_field = nullptr;
  for (const char* key : {"error_type", "error_label", "label"}) {
    if (obj->contains(key)) {
      label_field = &obj->at(key);
      break;
    }
  }
  if (!label_field || !label_field->is_string()) parse_failure(raw, "reply has no error_type string");
  try {
    out.error_label = parse_error_label(label_field->get<std::string>());
  } catch (const Error&) {
    parse_failure(raw, fmt::format("'{}' is not a leaf error label", label_field->get<std::string>()));
  }

  if (obj->contains("explanation") && obj->at("explanation").is_string()) {
    out.explanation = obj->at("explanation").get<std::string>();
  }
  double conf = obj->contains("confidence") ? number_or(obj->at("confidence"), 0.5) : 0.5;
  if (std::isnan(conf)) conf = 0.5;
  out.confidence = std::clamp(conf, 0.0, 1.0);

  std::optional<long> step;
  if (obj->contains("first_error_step")) {
    const Json& s = obj->at("first_error_step");
    if (s.is_number_integer()) {
      step = s.get<long>();
    } else if (s.is_number()) {
      double d = s.get<double>();
      if (d != std::floor(d)) parse_failure(raw, "first_error_step is not an integer");
      step = static_cast<long>(d);
    } else if (s.is_string()) {
      static const std::regex digits(R"(\D*(\d+).*)");
      std::smatch m;
      std::string str = s.get<std::string>();
      if (std::regex_match(str, m, digits)) step = std::stol(m[1].str());
    } else if (!s.is_null()) {
      parse_failure(raw, "first_error_step has an unexpected type");
    }
  }

  if (out.error_label == ErrorLabel::kNoError) {
    out.first_error_step.reset();
    return out;
  }
  if (!step) parse_failure(raw, "an error label requires first_error_step");
  if (*step < 1) parse_failure(raw, fmt::format("first_error_step {} is not positive", *step));
  if (static_cast<std::size_t>(*step) > step_count) {
    throw JudgeReplyError(ErrorCode::kStepOutOfRange,
                          fmt::format("step {} claimed for a {}-step solution", *step, step_count),
                          std::string(raw));
  }
  out.first_error_step = static_cast<int>(*step);
  return out;
}

// ---------------------------------------------------------------------------
// Prompt

std::string render_judge_prompt(const JudgeCaseView& view, std::span<const ErrorLabel> taxonomy,
                                const PromptOptions& options) {
  std::vector<ErrorLabel> labels;
  for (ErrorLabel l : taxonomy) {
    if (l != ErrorLabel::kNoError) labels.push_back(l);
  }
  if (labels.empty()) throw Error(ErrorCode::kConfigError, "judge prompt needs a non-empty taxonomy");

  std::string p;
  p += "A quantized language model wrote the step-by-step solution below. Its final answer "
       "does not match the reference answer.\n\n";
  p += fmt::format("Case: {}\n\n", view.case_key);
  p += fmt::format("## Problem\n{}\n\n", view.problem_text);
  p += fmt::format("## Reference answer\n{}\n\n", view.gold_answer);
  if (options.include_gold_solution && view.gold_solution) {
    p += fmt::format("## Reference solution\n{}\n\n", *view.gold_solution);
  }
  p += "## Solution under review\n";
  if (view.solution) {
    for (const auto& step : view.solution->steps) p += fmt::format("Step {}: {}\n", step.index, step.text);
  } else {
    p += view.raw_solution + "\n";
  }
  p += "\n## Error taxonomy\n";
  for (ErrorCategory cat : kAllCategories) {
    bool header = false;
    for (ErrorLabel l : labels) {
      if (category_of(l) != cat) continue;
      if (!header) p += fmt::format("{} ({})\n", display_name(cat), to_key(cat));
      header = true;
      p += fmt::format("  - {}: {}\n", to_key(l), description(l));
    }
  }
  p += "\n## Instructions\n"
       "Find the first step that contains an error and classify that error with exactly one "
       "leaf label from the taxonomy (the lower_snake_case key, not the category). Reply with "
       "a single JSON object and nothing else:\n"
       "{\"first_error_step\": <step number>, \"error_type\": \"<label>\", "
       "\"explanation\": \"<one or two sentences>\", \"confidence\": <number from 0 to 1>}\n"
       "Use \"error_type\": \"no_error\" with \"first_error_step\": null only when the final "
       "answer is actually correct and differs from the reference answer only in notation.\n";
  return p;
}

Json build_request_body(const JudgeSpec& spec, std::string_view prompt) {
  return Json{{"model", spec.model_name},
              {"temperature", 0},
              {"messages",
               Json::array({Json{{"role", "system"}, {"content", kJudgeSystemPrompt}},
                            Json{{"role", "user"}, {"content", prompt}}})}};
}

// ---------------------------------------------------------------------------
// Transport

namespace {

struct Endpoint {
  std::string base;    // scheme://host:port
  std::string prefix;  // path prefix without trailing '/'
};

Endpoint split_endpoint(const std::string& url) {
  auto scheme = url.find("://");
  auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  Endpoint ep;
  ep.base = url.substr(0, path_start);
  if (path_start != std::string::npos) ep.prefix = url.substr(path_start);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

std::chrono::milliseconds backoff_delay(const JudgeSpec& spec, int attempt) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  double base = spec.backoff_base_ms * std::pow(2.0, attempt);
  std::uniform_real_distribution<double> jitter(0.0, 0.25 * base);
  return std::chrono::milliseconds(static_cast<long>(base + jitter(rng)));
}

}  // namespace

JudgeAssessment request_assessment(const JudgeSpec& spec, const std::string& prompt,
                                   std::size_t step_count, const std::string& case_id) {
  httplib::Headers headers;
  if (!spec.api_key_env.empty()) {
    const char* key = std::getenv(spec.api_key_env.c_str());
    if (!key || !*key) {
      throw Error(ErrorCode::kConfigError,
                  fmt::format("{}: credential variable {} is not set", spec.judge_id, spec.api_key_env));
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  Endpoint ep = split_endpoint(spec.endpoint_url);
  httplib::Client client(ep.base);
  auto timeout = std::chrono::milliseconds(static_cast<long>(spec.timeout_s * 1000));
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  const std::string body = build_request_body(spec, prompt).dump();
  const std::string path = ep.prefix + kChatPath;
  std::string last_error;
  for (int attempt = 0; attempt <= spec.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(backoff_delay(spec, attempt - 1));
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = fmt::format("transport error: {}", httplib::to_string(res.error()));
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw Error(ErrorCode::kAuthError, fmt::format("{}: HTTP {}", spec.judge_id, res->status));
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kJudgeUnavailable,
                  fmt::format("{}: unexpected HTTP {}", spec.judge_id, res->status));
    }

    auto reply = Json::parse(res->body, nullptr, false);
    std::string content;
    if (!reply.is_discarded() && reply.contains("choices") && reply["choices"].is_array() &&
        !reply["choices"].empty()) {
      const Json& msg = reply["choices"][0].value("message", Json::object());
      if (msg.contains("content") && msg["content"].is_string()) content = msg["content"].get<std::string>();
    } else {
      throw JudgeReplyError(ErrorCode::kParseFailure, "not a chat-completions response", res->body);
    }

    AssessmentFields fields = parse_assessment(content, step_count);
    JudgeAssessment a;
    a.judge_id = spec.judge_id;
    a.case_id = case_id;
    a.first_error_step = fields.first_error_step;
    a.error_label = fields.error_label;
    a.explanation = std::move(fields.explanation);
    a.confidence = fields.confidence;
    a.raw_response = std::move(content);
    return a;
  }
  throw Error(ErrorCode::kJudgeUnavailable,
              fmt::format("{}: gave up after {} retries ({})", spec.judge_id, spec.max_retries, last_error));
}

// ---------------------------------------------------------------------------
// Records and cache

void to_json(Json& j, const JudgeAssessment& a) {
  j = Json{{"judge_id", a.judge_id},
           {"case_id", a.case_id},
           {"first_error_step", a.first_error_step ? Json(*a.first_error_step) : Json(nullptr)},
           {"error_label", to_key(a.error_label)},
           {"explanation", a.explanation},
           {"confidence", a.confidence},
           {"raw_response", a.raw_response}};
}

void from_json(const Json& j, JudgeAssessment& a) {
  a.judge_id = j.at("judge_id").get<std::string>();
  a.case_id = j.value("case_id", "");
  const Json& step = j.at("first_error_step");
  a.first_error_step = step.is_null() ? std::nullopt : std::optional<int>(step.get<int>());
  a.error_label = parse_error_label(j.at("error_label").get<std::string>());
  a.explanation = j.value("explanation", "");
  a.confidence = j.value("confidence", 0.5);
  a.raw_response = j.value("raw_response", "");
}

void to_json(Json& j, const JudgeRecord& r) {
  j = Json{{"judge_id", r.judge_id},
           {"case_id", r.case_id},
           {"model_id", r.model_id},
           {"quant_method", to_key(r.quant_method)},
           {"prompt_hash", r.prompt_hash},
           {"status", r.ok() ? "ok" : "parse_failure"},
           {"assessment", r.assessment ? Json(*r.assessment) : Json(nullptr)},
           {"failure", r.failure},
           {"raw_response", r.raw_response}};
}

void from_json(const Json& j, JudgeRecord& r) {
  r.judge_id = j.at("judge_id").get<std::string>();
  r.case_id = j.at("case_id").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.quant_method = parse_quant_method(j.at("quant_method").get<std::string>());
  r.prompt_hash = j.value("prompt_hash", "");
  r.assessment = j.at("assessment").is_null() ? std::nullopt
                                              : std::optional<JudgeAssessment>(j.at("assessment").get<JudgeAssessment>());
  r.failure = j.value("failure", "");
  r.raw_response = j.value("raw_response", "");
}

AssessmentCache::AssessmentCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path AssessmentCache::entry_path(const std::string& judge_id, const std::string& case_key,
                                                  const std::string& prompt_hash) const {
  std::string digest = sha256_hex(judge_id + '\n' + case_key + '\n' + prompt_hash);
  return dir_ / (digest.substr(0, 40) + ".json");
}

std::optional<JudgeRecord> AssessmentCache::get(const std::string& judge_id, const std::string& case_key,
                                                const std::string& prompt_hash) const {
  auto path = entry_path(judge_id, case_key, prompt_hash);
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    auto rec = read_json(path).get<JudgeRecord>();
    if (rec.judge_id != judge_id || rec.prompt_hash != prompt_hash) return std::nullopt;
    return rec;
  } catch (const std::exception&) {
    return std::nullopt;  // unreadable entry: treat as a miss and overwrite
  }
}

void AssessmentCache::put(const std::string& case_key, const JudgeRecord& record) const {
  write_json_atomic(entry_path(record.judge_id, case_key, record.prompt_hash), record);
}

std::string JudgeJob::case_key() const {
  return fmt::format("{}/{}/{}", model_id, to_key(quant_method), case_id);
}

std::vector<std::vector<JudgeRecord>> run_panel(const JudgePanel& panel, std::span<const JudgeJob> jobs,
                                                const AssessmentCache* cache, PanelRunStats* stats) {
  const auto& judges = panel.judges();
  std::vector<std::vector<JudgeRecord>> results(jobs.size(), std::vector<JudgeRecord>(judges.size()));
  std::vector<std::string> hashes;
  hashes.reserve(jobs.size());
  for (const auto& job : jobs) hashes.push_back(sha256_hex(job.prompt));

  std::mutex mu;
  std::optional<Error> first_error;
  std::atomic<std::size_t> requests{0};
  std::atomic<std::size_t> hits{0};

  std::vector<std::jthread> workers;
  for (std::size_t ji = 0; ji < judges.size(); ++ji) {
    // Per-judge work list of uncached jobs.
    auto pending = std::make_shared<std::vector<std::size_t>>();
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      JudgeRecord& slot = results[k][ji];
      if (cache) {
        if (auto hit = cache->get(judges[ji].judge_id, jobs[k].case_key(), hashes[k])) {
          slot = std::move(*hit);
          ++hits;
          continue;
        }
      }
      pending->push_back(k);
    }
    auto next = std::make_shared<std::atomic<std::size_t>>(0);
    int threads = std::min<int>(judges[ji].max_parallel, static_cast<int>(pending->size()));
    for (int t = 0; t < threads; ++t) {
      workers.emplace_back([&, ji, pending, next] {
        const JudgeSpec& spec = judges[ji];
        for (std::size_t i = (*next)++; i < pending->size(); i = (*next)++) {
          std::size_t k = (*pending)[i];
          const JudgeJob& job = jobs[k];
          JudgeRecord rec;
          rec.judge_id = spec.judge_id;
          rec.case_id = job.case_id;
          rec.model_id = job.model_id;
          rec.quant_method = job.quant_method;
          rec.prompt_hash = hashes[k];
          ++requests;
          try {
            JudgeAssessment a = request_assessment(spec, job.prompt, job.step_count, job.case_id);
            rec.raw_response = a.raw_response;
            rec.assessment = std::move(a);
          } catch (const JudgeReplyError& e) {
            rec.failure = e.what();
            rec.raw_response = e.raw_response();
          } catch (const Error& e) {
            std::lock_guard lock(mu);
            if (!first_error) first_error = e;
            continue;
          }
          if (cache) cache->put(job.case_key(), rec);
          results[k][ji] = std::move(rec);
        }
      });
    }
  }
  workers.clear();  // joins

  if (stats) {
    stats->requests += requests.load();
    stats->cache_hits += hits.load();
  }
  if (first_error) throw *first_error;
  return results;
}

}  // namespace qdiag
