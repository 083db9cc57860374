#include "qdiag/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "qdiag/error.hpp"
#include "qdiag/io.hpp"
#include "qdiag/mathexpr.hpp"
#include "qdiag/reporting.hpp"
#include "qdiag/scoring.hpp"

namespace qdiag {

namespace fs = std::filesystem;

std::string_view to_key(Stage stage) {
  switch (stage) {
    case Stage::kScoreFp: return "score_fp";
    case Stage::kScoreQuant: return "score_quant";
    case Stage::kExtractFailures: return "extract_failures";
    case Stage::kJudge: return "judge";
    case Stage::kConsensus: return "consensus";
    case Stage::kReview: return "review";
    case Stage::kCurate: return "curate";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (Stage s : kAllStages) {
    if (to_key(s) == text) return s;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown stage '{}'", text));
}

std::string_view to_key(StageState state) {
  switch (state) {
    case StageState::kPending: return "pending";
    case StageState::kRunning: return "running";
    case StageState::kDone: return "done";
    case StageState::kFailed: return "failed";
  }
  return "?";
}

StageState parse_stage_state(std::string_view text) {
  for (StageState s : {StageState::kPending, StageState::kRunning, StageState::kDone, StageState::kFailed}) {
    if (to_key(s) == text) return s;
  }
  throw Error(ErrorCode::kCorruptRun, fmt::format("unknown stage state '{}'", text));
}

std::string run_slug(const std::string& model_id, QuantMethod quant) {
  std::string m = model_id;
  std::replace(m.begin(), m.end(), '/', '_');
  return fmt::format("{}__{}", m, to_key(quant));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return std::stoull(sha256_hex(fmt::format("{}:{}", seed, name)).substr(0, 16), nullptr, 16);
}

RunConfig RunConfig::parse(const Json& doc) {
  try {
    RunConfig c;
    if (!doc.contains("seed") || !doc.at("seed").is_number_integer()) {
      throw Error(ErrorCode::kConfigError, "config needs an integer seed");
    }
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.gold_path = doc.at("gold").get<std::string>();
    const Json& tr = doc.at("transcripts");
    if (tr.is_string()) {
      c.transcript_paths.push_back(tr.get<std::string>());
    } else {
      for (const auto& p : tr) c.transcript_paths.push_back(p.get<std::string>());
    }
    for (const auto& m : doc.at("models")) {
      c.models.emplace_back(m.at("model_id").get<std::string>(), parse_model_scale(m.at("scale").get<std::string>()));
    }
    if (c.models.empty()) throw Error(ErrorCode::kConfigError, "config lists no models");
    for (const auto& q : doc.value("quant_methods", Json::array({"awq_w4a16", "gptq_w4a16"}))) {
      QuantMethod qm = parse_quant_method(q.get<std::string>());
      if (qm == QuantMethod::kBf16) throw Error(ErrorCode::kConfigError, "bf16 is not a quantized method");
      c.quant_methods.push_back(qm);
    }
    c.step_marker = doc.value("step_marker", c.step_marker);
    StepMarker check(c.step_marker);
    c.judges = panel_from_json(doc.at("judges")).judges();
    c.policy = doc.value("policy", Json::object()).get<ConsensusPolicy>();
    if (c.policy.baseline_judge_id.empty()) c.policy.baseline_judge_id = JudgePanel(c.judges).baseline().judge_id;
    if (c.policy.baseline_judge_id != JudgePanel(c.judges).baseline().judge_id) {
      throw Error(ErrorCode::kConfigError, "policy baseline differs from the panel's baseline judge");
    }
    c.policy.validate(c.judges.size());
    Json judge_opts = doc.value("judge", Json::object());
    c.include_gold_solution = judge_opts.value("include_gold_solution", false);
    c.audit_rate = doc.value("review", Json::object()).value("audit_rate", 0.02);
    if (!(c.audit_rate > 0.0 && c.audit_rate <= 1.0)) throw Error(ErrorCode::kConfigError, "audit_rate outside (0, 1]");
    Json cur = doc.value("curation", Json::object());
    if (cur.contains("settings")) {
      c.settings.clear();
      for (const auto& s : cur.at("settings")) c.settings.push_back(ablation_setting_from_id(s.get<int>()));
    }
    if (cur.contains("target") && !cur.at("target").is_null()) c.target = cur.at("target").get<std::size_t>();
    c.system_prompt = cur.value("system_prompt", "");
    return c;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
}

std::map<std::string, ModelScale> RunConfig::scales() const {
  return std::map<std::string, ModelScale>(models.begin(), models.end());
}

void RunManifest::validate() const {
  bool all_done = true;
  for (Stage s : kAllStages) {
    auto it = stages.find(s);
    if (it == stages.end()) throw Error(ErrorCode::kCorruptRun, fmt::format("manifest lacks stage {}", to_key(s)));
    if (it->second.state == StageState::kDone && !all_done) {
      throw Error(ErrorCode::kCorruptRun, fmt::format("stage {} done before its predecessors", to_key(s)));
    }
    all_done = all_done && it->second.state == StageState::kDone;
  }
}

void to_json(Json& j, const RunManifest& m) {
  Json stages = Json::object();
  for (const auto& [s, r] : m.stages) {
    stages[std::string(to_key(s))] = Json{{"state", to_key(r.state)},
                                          {"input_digest", r.input_digest},
                                          {"outputs", r.outputs},
                                          {"counts", r.counts},
                                          {"error", r.error}};
  }
  j = Json{{"run_id", m.run_id},     {"created_at", m.created_at}, {"config_digest", m.config_digest},
           {"inputs", m.inputs},     {"seeds", m.seeds},           {"stages", stages},
           {"stage_order", [] {
              Json order = Json::array();
              for (Stage s : kAllStages) order.push_back(std::string(to_key(s)));
              return order;
            }()}};
}

void from_json(const Json& j, RunManifest& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.created_at = j.at("created_at").get<std::string>();
  m.config_digest = j.at("config_digest").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.seeds = j.at("seeds");
  m.stages.clear();
  for (const auto& [key, sj] : j.at("stages").items()) {
    StageRecord r;
    r.state = parse_stage_state(sj.at("state").get<std::string>());
    r.input_digest = sj.at("input_digest").get<std::string>();
    r.outputs = sj.at("outputs").get<std::map<std::string, std::string>>();
    r.counts = sj.at("counts");
    r.error = sj.value("error", "");
    m.stages[parse_stage(key)] = r;
  }
}

namespace {

int acquire_lock(const fs::path& dir) {
  fs::path lock = dir / ".lock";
  int fd = ::open(lock.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIoFailure, fmt::format("cannot open {}", lock.string()));
  if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd);
    throw Error(ErrorCode::kRunLocked, fmt::format("{} is in use by another process", dir.string()));
  }
  return fd;
}

std::string utc_now() {
  auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

// Judge fields that only affect transport are left out of digests, so a
// run can be resumed against a judge server on a different port.
Json semantic_config(const Json& doc) {
  Json d = doc;
  if (d.contains("judges")) {
    Json& judges = d["judges"].is_object() ? d["judges"]["judges"] : d["judges"];
    for (Json& jd : judges) {
      for (const char* k : {"endpoint_url", "api_key_env", "max_parallel", "timeout_s", "max_retries", "backoff_base_ms"}) {
        jd.erase(k);
      }
    }
  }
  return d;
}

const std::vector<std::string> kRunDirs = {"scores", "failures", "assessments", "outcomes", "review", "datasets", "reports"};

std::vector<Transcript> load_all_transcripts(const RunConfig& c) {
  std::vector<Transcript> all;
  for (const auto& p : c.transcript_paths) {
    auto part = load_transcripts(p);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

std::vector<Transcript> select_transcripts(std::span<const Transcript> all, const std::string& model, QuantMethod q) {
  std::vector<Transcript> out;
  for (const auto& t : all) {
    if (t.model_id == model && t.quant_method == q) out.push_back(t);
  }
  return out;
}

}  // namespace

Run::Run(fs::path dir, int lock_fd, RunOptions options)
    : dir_(std::move(dir)), lock_fd_(lock_fd), options_(std::move(options)) {}

Run::Run(Run&& other) noexcept
    : dir_(std::move(other.dir_)),
      lock_fd_(std::exchange(other.lock_fd_, -1)),
      options_(std::move(other.options_)),
      config_doc_(std::move(other.config_doc_)),
      config_(std::move(other.config_)),
      manifest_(std::move(other.manifest_)) {}

Run::~Run() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

Run Run::init(const fs::path& run_dir, const fs::path& config_path, std::optional<std::uint64_t> seed_override,
              RunOptions options) {
  fs::create_directories(run_dir);
  Run run(run_dir, acquire_lock(run_dir), std::move(options));
  if (fs::exists(run_dir / "manifest.json")) {
    throw Error(ErrorCode::kConfigError, fmt::format("{} is already initialised", run_dir.string()));
  }
  Json doc;
  try {
    doc = read_json(config_path);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfigError, fmt::format("{}: {}", config_path.string(), e.what()));
  }
  if (seed_override) doc["seed"] = *seed_override;
  fs::path base = fs::absolute(config_path).parent_path();
  auto resolve = [&](const Json& p) { return (base / p.get<std::string>()).lexically_normal().string(); };
  if (doc.contains("gold")) doc["gold"] = resolve(doc["gold"]);
  if (doc.contains("transcripts")) {
    Json resolved = Json::array();
    if (doc["transcripts"].is_string()) {
      resolved.push_back(resolve(doc["transcripts"]));
    } else {
      for (const auto& p : doc["transcripts"]) resolved.push_back(resolve(p));
    }
    doc["transcripts"] = resolved;
  }
  RunConfig::parse(doc);
  for (const auto& d : kRunDirs) fs::create_directories(run_dir / d);
  write_json_atomic(run_dir / "config.json", doc);

  run.manifest_.run_id = fs::absolute(run_dir).lexically_normal().filename().string();
  if (run.manifest_.run_id.empty()) run.manifest_.run_id = fs::absolute(run_dir).parent_path().filename().string();
  run.manifest_.created_at = utc_now();
  for (Stage s : kAllStages) run.manifest_.stages[s] = StageRecord{};
  run.load();
  run.save_manifest();
  return run;
}

Run Run::open(const fs::path& run_dir, RunOptions options) {
  if (!fs::is_directory(run_dir)) throw Error(ErrorCode::kCorruptRun, fmt::format("no run at {}", run_dir.string()));
  Run run(run_dir, acquire_lock(run_dir), std::move(options));
  fs::path mpath = run_dir / "manifest.json";
  if (!fs::exists(mpath)) throw Error(ErrorCode::kCorruptRun, fmt::format("missing {}", mpath.string()));
  try {
    run.manifest_ = read_json(mpath).get<RunManifest>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kCorruptRun, fmt::format("{}: {}", mpath.string(), e.what()));
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorruptRun, fmt::format("{}: {}", mpath.string(), e.what()));
  }
  run.manifest_.validate();
  for (auto& [s, r] : run.manifest_.stages) {
    if (r.state == StageState::kRunning) r.state = StageState::kPending;
    if (r.state != StageState::kDone) continue;
    for (const auto& [rel, sha] : r.outputs) {
      fs::path p = run_dir / rel;
      if (!fs::exists(p) || file_sha256(p) != sha) {
        throw Error(ErrorCode::kCorruptRun, fmt::format("{} does not match the manifest", p.string()));
      }
    }
  }
  try {
    run.load();
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorruptRun, fmt::format("{}: {}", (run_dir / "config.json").string(), e.what()));
  }
  run.save_manifest();
  return run;
}

void Run::load() {
  config_doc_ = read_json(dir_ / "config.json");
  config_ = RunConfig::parse(config_doc_);
  manifest_.config_digest = sha256_hex(semantic_config(config_doc_).dump());
  manifest_.seeds = Json{{"run", config_.seed},
                         {"review", derive_seed(config_.seed, "review")},
                         {"curate", derive_seed(config_.seed, "curate")}};
  manifest_.inputs.clear();
  manifest_.inputs[config_.gold_path.filename().string()] = file_sha256(config_.gold_path);
  for (const auto& p : config_.transcript_paths) manifest_.inputs[p.filename().string()] = file_sha256(p);
}

void Run::save_manifest() const { write_json_atomic(dir_ / "manifest.json", manifest_); }

void Run::update_config(const Json& patch) {
  Json doc = config_doc_;
  doc.merge_patch(patch);
  RunConfig::parse(doc);
  write_json_atomic(dir_ / "config.json", doc);
  load();
  save_manifest();
}

std::string Run::input_digest(Stage stage) const {
  const Json sem = semantic_config(config_doc_);
  auto upstream = [&](std::initializer_list<Stage> stages) {
    Json u = Json::object();
    for (Stage s : stages) u[std::string(to_key(s))] = manifest_.stages.at(s).outputs;
    return u;
  };
  auto review_log = [&] {
    fs::path p = dir_ / "review" / "events.jsonl";
    return fs::exists(p) ? file_sha256(p) : std::string();
  };
  Json inputs{{"gold", manifest_.inputs}, {"models", sem.at("models")}, {"step_marker", config_.step_marker}};
  Json d{{"stage", to_key(stage)}};
  switch (stage) {
    case Stage::kScoreFp: d["inputs"] = inputs; break;
    case Stage::kScoreQuant:
      d["inputs"] = inputs;
      d["quant_methods"] = sem.value("quant_methods", Json());
      break;
    case Stage::kExtractFailures: d["upstream"] = upstream({Stage::kScoreFp, Stage::kScoreQuant}); break;
    case Stage::kJudge:
      d["inputs"] = inputs;
      d["judges"] = sem.at("judges");
      d["judge"] = sem.value("judge", Json::object());
      d["upstream"] = upstream({Stage::kExtractFailures});
      break;
    case Stage::kConsensus:
      d["policy"] = Json(config_.policy);
      d["upstream"] = upstream({Stage::kJudge});
      break;
    case Stage::kReview:
      d["audit_rate"] = config_.audit_rate;
      d["seed"] = config_.seed;
      d["upstream"] = upstream({Stage::kConsensus});
      break;
    case Stage::kCurate:
      d["inputs"] = inputs;
      d["curation"] = sem.value("curation", Json::object());
      d["seed"] = config_.seed;
      d["review_log"] = review_log();
      d["upstream"] = upstream({Stage::kConsensus, Stage::kReview});
      break;
    case Stage::kReport:
      d["models"] = sem.at("models");
      d["review_log"] = review_log();
      d["upstream"] = upstream({Stage::kScoreFp, Stage::kScoreQuant, Stage::kConsensus, Stage::kReview});
      break;
  }
  return sha256_hex(d.dump());
}

void Run::refresh() {
  bool reset_rest = false;
  bool changed = false;
  for (Stage s : kAllStages) {
    StageRecord& r = manifest_.stages.at(s);
    if (reset_rest) {
      if (r.state == StageState::kDone) {
        r.state = StageState::kPending;
        changed = true;
      }
      continue;
    }
    if (r.state != StageState::kDone) {
      reset_rest = true;
      continue;
    }
    if (r.input_digest != input_digest(s)) {
      r.state = StageState::kPending;
      reset_rest = true;
      changed = true;
    }
  }
  if (changed) save_manifest();
}

bool Run::run_stage(Stage stage, bool force) {
  refresh();
  for (Stage s : kAllStages) {
    if (s == stage) break;
    if (manifest_.stages.at(s).state != StageState::kDone) {
      throw Error(ErrorCode::kStageOrderViolation,
                  fmt::format("{} needs {} to be done first", to_key(stage), to_key(s)));
    }
  }
  StageRecord& rec = manifest_.stages.at(stage);
  if (rec.state == StageState::kDone && !force) return false;

  std::string digest = input_digest(stage);
  rec.state = StageState::kRunning;
  rec.error.clear();
  save_manifest();
  StageRecord result;
  try {
    result = execute(stage);
  } catch (const std::exception& e) {
    StageRecord& failed = manifest_.stages.at(stage);
    failed.state = StageState::kFailed;
    failed.error = e.what();
    save_manifest();
    throw Error(ErrorCode::kStageFailed, fmt::format("{}: {}", to_key(stage), e.what()));
  }
  result.state = StageState::kDone;
  result.input_digest = digest;
  manifest_.stages.at(stage) = std::move(result);
  save_manifest();
  refresh();

  if (const char* crash = std::getenv("QDIAG_CRASH_AFTER"); crash && to_key(stage) == crash) {
    std::_Exit(75);
  }
  return true;
}

void Run::run_through(Stage last) {
  for (Stage s : kAllStages) {
    run_stage(s);
    if (s == last) break;
  }
}

StageRecord Run::execute(Stage stage) {
  switch (stage) {
    case Stage::kScoreFp: return exec_score(false);
    case Stage::kScoreQuant: return exec_score(true);
    case Stage::kExtractFailures: return exec_failures();
    case Stage::kJudge: return exec_judge();
    case Stage::kConsensus: return exec_consensus();
    case Stage::kReview: return exec_review();
    case Stage::kCurate: return exec_curate();
    case Stage::kReport: return exec_report();
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown stage");
}

namespace {

struct OutputSet {
  const fs::path& dir;
  StageRecord rec;

  void json(const std::string& rel, const Json& doc) {
    write_json_atomic(dir / rel, doc);
    rec.outputs[rel] = file_sha256(dir / rel);
  }
  void jsonl(const std::string& rel, const std::vector<Json>& rows) {
    write_jsonl_atomic(dir / rel, rows);
    rec.outputs[rel] = file_sha256(dir / rel);
  }
  void text(const std::string& rel, const std::string& body) {
    write_file_atomic(dir / rel, body);
    rec.outputs[rel] = file_sha256(dir / rel);
  }
};

void clear_dir(const fs::path& dir, std::string_view keep_prefix = {}) {
  if (!fs::exists(dir)) return;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!keep_prefix.empty() && e.path().filename().string().starts_with(keep_prefix)) continue;
    if (e.is_regular_file()) fs::remove(e.path());
  }
}

}  // namespace

StageRecord Run::exec_score(bool quantized) {
  OutputSet out{dir_, {}};
  GoldSet gold = load_gold(config_.gold_path);
  auto all = load_all_transcripts(config_);
  StepMarker marker(config_.step_marker);
  if (!quantized) {
    for (const auto& [model, scale] : config_.models) {
      auto ts = select_transcripts(all, model, QuantMethod::kBf16);
      auto report = score_predictions(model, QuantMethod::kBf16, ts, gold, marker);
      out.json("scores/" + run_slug(model, QuantMethod::kBf16) + ".json", report);
      out.rec.counts[model] = report.accuracy.fixed2();
    }
    return out.rec;
  }
  Json deltas = Json::array();
  for (const auto& [model, scale] : config_.models) {
    auto fp = read_json(dir_ / "scores" / (run_slug(model, QuantMethod::kBf16) + ".json")).get<ScoreReport>();
    for (QuantMethod q : config_.quant_methods) {
      auto ts = select_transcripts(all, model, q);
      auto report = score_predictions(model, q, ts, gold, marker);
      out.json("scores/" + run_slug(model, q) + ".json", report);
      out.rec.counts[run_slug(model, q)] = report.accuracy.fixed2();
      auto d = degradation_delta(fp, report);
      deltas.push_back(Json{{"model_id", model}, {"quant_method", to_key(q)}, {"delta", d}, {"rendered", d.render()}});
    }
  }
  out.json("scores/deltas.json", deltas);
  return out.rec;
}

StageRecord Run::exec_failures() {
  OutputSet out{dir_, {}};
  std::size_t total = 0;
  for (const auto& [model, scale] : config_.models) {
    auto fp = read_json(dir_ / "scores" / (run_slug(model, QuantMethod::kBf16) + ".json")).get<ScoreReport>();
    for (QuantMethod q : config_.quant_methods) {
      auto qr = read_json(dir_ / "scores" / (run_slug(model, q) + ".json")).get<ScoreReport>();
      Json cases = Json::array();
      for (const auto& id : extract_failures(fp, qr)) {
        cases.push_back(Json{{"case_id", id}, {"status", to_key(qr.per_case.at(id).status)}});
      }
      total += cases.size();
      out.rec.counts[run_slug(model, q)] = cases.size();
      out.json("failures/" + run_slug(model, q) + ".json",
               Json{{"model_id", model}, {"quant_method", to_key(q)}, {"cases", cases}});
    }
  }
  out.rec.counts["total"] = total;
  return out.rec;
}

StageRecord Run::exec_judge() {
  OutputSet out{dir_, {}};
  GoldSet gold = load_gold(config_.gold_path);
  TranscriptIndex index;
  auto all = load_all_transcripts(config_);
  index.add_all(all);
  StepMarker marker(config_.step_marker);

  std::vector<JudgeSpec> specs = config_.judges;
  std::string url = options_.judge_url;
  if (url.empty()) {
    if (const char* env = std::getenv("QDIAG_JUDGE_URL")) url = env;
  }
  if (!url.empty()) {
    for (auto& s : specs) s.endpoint_url = url;
  }
  JudgePanel panel(specs);

  struct Slot {
    std::string slug;
    std::size_t first = 0;
    std::size_t count = 0;
  };
  std::vector<Slot> slots;
  std::vector<JudgeJob> jobs;
  std::size_t skipped = 0;
  for (const auto& [model, scale] : config_.models) {
    for (QuantMethod q : config_.quant_methods) {
      Json failures = read_json(dir_ / "failures" / (run_slug(model, q) + ".json"));
      Slot slot{run_slug(model, q), jobs.size(), 0};
      for (const auto& c : failures.at("cases")) {
        if (c.at("status") != "wrong_answer") {
          ++skipped;
          continue;
        }
        std::string id = c.at("case_id").get<std::string>();
        const Transcript* t = index.find(model, q, id);
        auto parsed = parse_solution(t->raw_output, marker);
        const auto& sol = std::get<StepwiseSolution>(parsed);
        const GoldRecord& g = gold.at(id);
        JudgeJob job{id, model, q, "", sol.step_count()};
        JudgeCaseView view{job.case_key(), g.problem_text, g.gold_answer, std::nullopt, &sol, t->raw_output};
        job.prompt = render_judge_prompt(view, kErrorLabels, {config_.include_gold_solution});
        jobs.push_back(std::move(job));
        ++slot.count;
      }
      slots.push_back(slot);
    }
  }

  AssessmentCache cache(dir_ / "assessments" / "cache");
  PanelRunStats stats;
  auto results = run_panel(panel, jobs, &cache, &stats);
  std::size_t unusable = 0;
  for (const Slot& slot : slots) {
    std::vector<Json> rows;
    for (std::size_t i = slot.first; i < slot.first + slot.count; ++i) {
      for (const JudgeRecord& r : results[i]) {
        if (!r.ok()) ++unusable;
        rows.push_back(r);
      }
    }
    out.jsonl("assessments/" + slot.slug + ".jsonl", rows);
  }
  out.rec.counts = Json{{"cases", jobs.size()},
                        {"requests", stats.requests},
                        {"cache_hits", stats.cache_hits},
                        {"unusable_replies", unusable},
                        {"not_judged_format_violation", skipped}};
  return out.rec;
}

StageRecord Run::exec_consensus() {
  OutputSet out{dir_, {}};
  GoldSet gold = load_gold(config_.gold_path);
  TranscriptIndex index;
  index.add_all(load_all_transcripts(config_));
  StepMarker marker(config_.step_marker);
  std::map<std::string, std::size_t> by_status;
  for (const auto& [model, scale] : config_.models) {
    for (QuantMethod q : config_.quant_methods) {
      std::string slug = run_slug(model, q);
      std::map<std::string, std::vector<JudgeRecord>> per_case;
      for (const Json& row : read_jsonl(dir_ / "assessments" / (slug + ".jsonl"))) {
        JudgeRecord r = row.get<JudgeRecord>();
        per_case[r.case_id].push_back(std::move(r));
      }
      std::vector<Json> rows;
      for (const auto& [id, records] : per_case) {
        auto recheck = [&] {
          auto parsed = parse_solution(index.find(model, q, id)->raw_output, marker);
          return !is_violation(parsed) &&
                 equivalent(std::get<StepwiseSolution>(parsed).final_answer_raw, gold.at(id).gold_answer);
        };
        ConsensusOutcome o = decide_case(id, model, q, records, config_.policy, recheck);
        ++by_status[std::string(to_key(o.status))];
        rows.push_back(o);
      }
      out.jsonl("outcomes/" + slug + ".jsonl", rows);
    }
  }
  out.rec.counts = by_status;
  return out.rec;
}

namespace {

std::vector<ConsensusOutcome> read_outcomes(const fs::path& dir, const RunConfig& c) {
  std::vector<ConsensusOutcome> all;
  for (const auto& [model, scale] : c.models) {
    for (QuantMethod q : c.quant_methods) {
      for (const Json& row : read_jsonl(dir / "outcomes" / (run_slug(model, q) + ".jsonl"))) {
        all.push_back(row.get<ConsensusOutcome>());
      }
    }
  }
  return all;
}

}  // namespace

StageRecord Run::exec_review() {
  OutputSet out{dir_, {}};
  GoldSet gold = load_gold(config_.gold_path);
  TranscriptIndex index;
  index.add_all(load_all_transcripts(config_));
  StepMarker marker(config_.step_marker);
  auto outcomes = read_outcomes(dir_, config_);

  std::map<std::string, std::vector<JudgeRecord>> records;
  for (const auto& [model, scale] : config_.models) {
    for (QuantMethod q : config_.quant_methods) {
      for (const Json& row : read_jsonl(dir_ / "assessments" / (run_slug(model, q) + ".jsonl"))) {
        JudgeRecord r = row.get<JudgeRecord>();
        ConsensusOutcome key;
        key.case_id = r.case_id;
        key.model_id = r.model_id;
        key.quant_method = r.quant_method;
        records[review_item_id(key)].push_back(std::move(r));
      }
    }
  }

  std::vector<std::string> accepted_ids;
  for (const auto& o : outcomes) {
    if (o.status == OutcomeStatus::kAccepted) accepted_ids.push_back(review_item_id(o));
  }
  std::vector<std::string> sample;
  if (!accepted_ids.empty()) sample = sample_for_review(accepted_ids, config_.audit_rate, derive_seed(config_.seed, "review"));
  std::set<std::string> sampled(sample.begin(), sample.end());

  std::vector<ReviewItem> items;
  for (const auto& o : outcomes) {
    std::string id = review_item_id(o);
    bool conflict = o.status == OutcomeStatus::kFlagged;
    if (!conflict && !sampled.contains(id)) continue;
    auto parsed = parse_solution(index.find(o.model_id, o.quant_method, o.case_id)->raw_output, marker);
    const auto& sol = std::get<StepwiseSolution>(parsed);
    ReviewInputs in{&o, gold.at(o.case_id).problem_text, gold.at(o.case_id).gold_answer, {}, sol.final_answer_raw,
                    records[id]};
    for (const auto& s : sol.steps) in.quant_steps.push_back(s.text);
    items.push_back(make_review_item(in, conflict ? ReviewReason::kConflict : ReviewReason::kAuditSample));
  }
  std::sort(items.begin(), items.end(), [](const ReviewItem& a, const ReviewItem& b) { return a.item_id < b.item_id; });

  // Keep an existing queue (and its verdicts) when it was built from the
  // same items; otherwise set the old log aside and start over.
  fs::path log = dir_ / "review" / "events.jsonl";
  if (fs::exists(log)) {
    bool same = false;
    try {
      ReviewStore existing(dir_ / "review");
      if (existing.size() == items.size()) {
        existing.add_items(items);
        same = existing.size() == items.size();
      }
    } catch (const Error&) {
      same = false;
    }
    if (!same) {
      int n = 1;
      while (fs::exists(dir_ / "review" / fmt::format("events.superseded-{}.jsonl", n))) ++n;
      fs::rename(log, dir_ / "review" / fmt::format("events.superseded-{}.jsonl", n));
    }
  }
  ReviewStore store(dir_ / "review");
  store.add_items(items);

  std::vector<Json> rows(items.begin(), items.end());
  out.jsonl("review/queue.jsonl", rows);
  out.json("review/audit_sample.json", Json{{"rate", config_.audit_rate},
                                            {"seed", derive_seed(config_.seed, "review")},
                                            {"pool", accepted_ids.size()},
                                            {"items", sample}});
  std::size_t conflicts = 0;
  for (const auto& i : items) conflicts += i.reason == ReviewReason::kConflict;
  out.rec.counts = Json{{"conflict", conflicts}, {"audit_sample", sample.size()}, {"accepted_pool", accepted_ids.size()}};
  return out.rec;
}

std::vector<ConsensusOutcome> Run::outcomes_with_verdicts() const {
  auto outcomes = read_outcomes(dir_, config_);
  if (!fs::exists(dir_ / "review" / "events.jsonl")) return outcomes;
  ReviewStore store(dir_ / "review");
  auto reviewed = store.outcomes();
  for (auto& o : outcomes) {
    auto it = reviewed.find(review_item_id(o));
    if (it != reviewed.end()) o = it->second;
  }
  return outcomes;
}

StageRecord Run::exec_curate() {
  OutputSet out{dir_, {}};
  clear_dir(dir_ / "datasets");
  GoldSet gold = load_gold(config_.gold_path);
  TranscriptIndex index;
  index.add_all(load_all_transcripts(config_));
  auto outcomes = outcomes_with_verdicts();
  auto pool = build_failure_pool(outcomes, index, gold, config_.scales(), StepMarker(config_.step_marker));
  auto deduped = deduplicate(pool.cases);
  auto counts = category_counts(deduped);
  std::size_t target = config_.target.value_or(deduped.size());
  auto quota = allocate_quota(counts, target);
  auto selected = select_cases(deduped, quota, derive_seed(config_.seed, "curate"));

  Json quota_json = Json::object();
  Json pool_json = Json::object();
  for (const auto& [c, n] : quota) quota_json[std::string(to_key(c))] = n;
  for (const auto& [c, n] : counts) pool_json[std::string(to_key(c))] = n;
  Json excluded = Json::array();
  for (const auto& e : pool.excluded) excluded.push_back(Json{{"case", e.case_key}, {"reason", e.reason}});
  Json per_setting = Json::object();
  Json warnings = Json::array();
  for (AblationSetting s : config_.settings) {
    std::string name = fmt::format("datasets/{}.jsonl", to_key(s));
    auto r = emit_preference_pairs(selected, s, config_.system_prompt, dir_ / name);
    out.rec.outputs[name] = file_sha256(dir_ / name);
    out.json(fmt::format("datasets/{}_recipe.json", to_key(s)), emit_training_recipe(s, name));
    per_setting[std::string(to_key(s))] = r.count;
    for (auto& w : r.warnings) warnings.push_back(w);
  }
  out.json("datasets/curation_summary.json", Json{{"failure_pool", pool.cases.size()},
                                                  {"deduplicated", deduped.size()},
                                                  {"pool_by_category", pool_json},
                                                  {"target", target},
                                                  {"quota", quota_json},
                                                  {"selected", selected.size()},
                                                  {"pairs", per_setting},
                                                  {"excluded", excluded},
                                                  {"warnings", warnings}});
  out.rec.counts = Json{{"deduplicated", deduped.size()}, {"selected", selected.size()}, {"pairs", per_setting}};
  return out.rec;
}

StageRecord Run::exec_report() {
  OutputSet out{dir_, {}};
  auto outcomes = outcomes_with_verdicts();
  auto scales = config_.scales();

  Json dist = Json::object();
  std::string csv;
  for (const auto& [name, g] : std::vector<std::pair<std::string, GroupBy>>{
           {"all", {}}, {"by_scale", {true, false}}, {"by_quant", {false, true}}, {"by_scale_quant", {true, true}}}) {
    auto reports = error_distribution(outcomes, g, scales);
    dist[name] = reports;
    if (name == "by_scale_quant") csv = distribution_csv(reports);
  }
  out.json("reports/distribution.json", dist);
  out.text("reports/distribution.csv", csv);

  std::vector<ScoreReport> scores;
  for (const auto& [model, scale] : config_.models) {
    scores.push_back(read_json(dir_ / "scores" / (run_slug(model, QuantMethod::kBf16) + ".json")).get<ScoreReport>());
    for (QuantMethod q : config_.quant_methods) {
      scores.push_back(read_json(dir_ / "scores" / (run_slug(model, q) + ".json")).get<ScoreReport>());
    }
  }
  auto entries = entries_from_reports(scores);
  auto table = comparison_table(entries);
  out.json("reports/table.json", table.to_json());
  out.text("reports/table.csv", table.to_csv());

  std::vector<ModelScale> shown;
  for (const auto& [model, scale] : config_.models) {
    if (std::find(shown.begin(), shown.end(), scale) == shown.end()) shown.push_back(scale);
  }
  std::sort(shown.begin(), shown.end());
  auto radar = radar_matrix(outcomes, shown, scales);
  out.json("reports/radar.json", radar.to_json());
  out.text("reports/radar.csv", radar.to_csv());

  AgreementStats stats;
  if (fs::exists(dir_ / "review" / "events.jsonl")) stats = ReviewStore(dir_ / "review").stats();
  out.json("reports/agreement.json", stats);
  out.rec.counts = Json{{"outcomes", outcomes.size()}, {"audited", stats.audited}};
  return out.rec;
}

}  // namespace qdiag
