#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "qdiag/curation.hpp"
#include "qdiag/error.hpp"
#include "qdiag/io.hpp"
#include "qdiag/pipeline.hpp"
#include "qdiag/reporting.hpp"
#include "qdiag/review.hpp"
#include "qdiag/review_server.hpp"
#include "qdiag/scoring.hpp"

namespace fs = std::filesystem;
using namespace qdiag;

namespace {

struct Globals {
  std::string run_dir;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string judge_url;
};

void require_run_dir(const Globals& g) {
  if (g.run_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "--run-dir is required");
}

Run open_run(const Globals& g) {
  require_run_dir(g);
  Run run = Run::open(g.run_dir, RunOptions{g.judge_url});
  if (g.seed && *g.seed != run.config().seed) run.update_config(Json{{"seed", *g.seed}});
  return run;
}

void print_status(const RunManifest& m) {
  fmt::print("run {} (created {})\n", m.run_id, m.created_at);
  for (Stage s : kAllStages) {
    const StageRecord& r = m.stages.at(s);
    fmt::print("  {:<17} {:<8} {}\n", to_key(s), to_key(r.state), r.counts.empty() ? "" : r.counts.dump());
    if (!r.error.empty()) fmt::print("  {:<17} error: {}\n", "", r.error);
  }
}

void run_stages(Run& run, std::initializer_list<Stage> stages, bool force = false) {
  for (Stage s : stages) {
    bool ran = run.run_stage(s, force);
    const StageRecord& r = run.manifest().stages.at(s);
    fmt::print("{}: {} {}\n", to_key(s), ran ? "done" : "up to date", r.counts.dump());
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, fmt::format("cannot read {}", path.string()));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    std::string t = trim(line);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diagnose quantization-induced reasoning errors and curate repair data."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--run-dir", g.run_dir, "Run directory");
  app.add_option("--config", g.config, "Run configuration (JSON)");
  auto* seed_opt = app.add_option("--seed", seed_value, "Run seed (overrides the config)");
  app.add_option("--judge-url", g.judge_url, "Replace every judge endpoint with this base URL");

  auto* init = app.add_subcommand("init", "Create a run directory from a config");
  auto* score = app.add_subcommand("score", "Score full-precision and quantized transcripts");

  auto* delta = app.add_subcommand("delta", "Print accuracy degradation");
  std::string base_file, quant_file, base_score, quant_score;
  delta->add_option("--baseline", base_file, "Baseline score report (JSON)");
  delta->add_option("--quant", quant_file, "Quantized score report (JSON)");
  delta->add_option("--baseline-score", base_score, "Baseline accuracy, e.g. 47.2");
  delta->add_option("--quant-score", quant_score, "Quantized accuracy, e.g. 41.8");

  auto* failures = app.add_subcommand("failures", "Extract the failure set");
  auto* judge = app.add_subcommand("judge", "Ask the judge panel about every failure");
  bool force_judge = false;
  judge->add_flag("--force", force_judge, "Re-run even when up to date (cached replies are reused)");
  auto* consensus = app.add_subcommand("consensus", "Apply the consensus policy");

  auto* sample = app.add_subcommand("sample-review", "Build the review queue with an audit sample");
  std::optional<double> rate;
  std::uint64_t sample_seed = 0;
  std::string cases_file;
  sample->add_option("--rate", rate, "Audit sampling rate in (0, 1]");
  auto* sample_seed_opt = sample->add_option("--seed", sample_seed, "Sampling seed");
  sample->add_option("--cases", cases_file, "Sample from a case list (one id per line) instead of a run");

  auto* serve = app.add_subcommand("serve", "Serve the review API and UI");
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string static_dir;
  serve->add_option("--port", port, "Port");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--static", static_dir, "Built review UI bundle to serve at /");

  auto* curate = app.add_subcommand("curate", "Select cases and emit preference pairs");
  std::optional<int> setting;
  std::optional<std::size_t> target;
  std::uint64_t curate_seed = 0;
  std::string pool_file, out_dir, system_prompt;
  curate->add_option("--setting", setting, "Ablation setting 0-3")->check(CLI::Range(0, 3));
  curate->add_option("--target", target, "Total number of pairs before the setting filter");
  auto* curate_seed_opt = curate->add_option("--seed", curate_seed, "Selection seed");
  curate->add_option("--pool", pool_file, "Failure pool (JSON Lines) to curate without a run");
  curate->add_option("--out", out_dir, "Output directory for --pool mode");
  curate->add_option("--system-prompt", system_prompt, "System prompt for --pool mode");

  auto* report = app.add_subcommand("report", "Print an analysis report");
  std::string kind = "distribution", group_by, format = "json";
  report->add_option("--kind", kind, "distribution, table or radar")
      ->check(CLI::IsMember({"distribution", "table", "radar"}));
  report->add_option("--group-by", group_by, "Grouping keys: scale, quant");
  report->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

  auto* resume = app.add_subcommand("resume", "Reopen a run and finish its remaining stages");
  auto* run_all = app.add_subcommand("run", "Run every stage that is not up to date");
  auto* status = app.add_subcommand("status", "Show stage states");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (init->parsed()) {
      require_run_dir(g);
      if (g.config.empty()) throw Error(ErrorCode::kInvalidArgument, "--config is required");
      Run run = Run::init(g.run_dir, g.config, g.seed, RunOptions{g.judge_url});
      fmt::print("initialised run {} at {}\n", run.manifest().run_id, g.run_dir);
    } else if (score->parsed()) {
      Run run = open_run(g);
      run_stages(run, {Stage::kScoreFp, Stage::kScoreQuant});
    } else if (delta->parsed()) {
      if (!base_score.empty() || !quant_score.empty()) {
        if (base_score.empty() || quant_score.empty()) {
          throw Error(ErrorCode::kInvalidArgument, "--baseline-score and --quant-score go together");
        }
        fmt::print("{}\n", degradation_delta(Percent::parse(base_score), Percent::parse(quant_score)).render());
      } else if (!base_file.empty() || !quant_file.empty()) {
        auto b = read_json(base_file).get<ScoreReport>();
        auto q = read_json(quant_file).get<ScoreReport>();
        fmt::print("{}\n", degradation_delta(b, q).render());
      } else {
        require_run_dir(g);
        for (const auto& row : read_json(fs::path(g.run_dir) / "scores" / "deltas.json")) {
          fmt::print("{} {} {}\n", row.at("model_id").get<std::string>(), row.at("quant_method").get<std::string>(),
                     row.at("rendered").get<std::string>());
        }
      }
    } else if (failures->parsed()) {
      Run run = open_run(g);
      run_stages(run, {Stage::kExtractFailures});
    } else if (judge->parsed()) {
      Run run = open_run(g);
      run_stages(run, {Stage::kJudge}, force_judge);
    } else if (consensus->parsed()) {
      Run run = open_run(g);
      run_stages(run, {Stage::kConsensus});
    } else if (sample->parsed()) {
      if (!cases_file.empty()) {
        std::uint64_t s = sample_seed_opt->count() ? sample_seed : g.seed.value_or(0);
        for (const auto& id : sample_for_review(read_lines(cases_file), rate.value_or(0.02), s)) {
          fmt::print("{}\n", id);
        }
      } else {
        if (sample_seed_opt->count()) g.seed = sample_seed;
        Run run = open_run(g);
        if (rate) run.update_config(Json{{"review", {{"audit_rate", *rate}}}});
        run_stages(run, {Stage::kReview});
      }
    } else if (serve->parsed()) {
      Run run = open_run(g);
      ReviewStore store(run.dir() / "review");
      ReviewServer server(store, static_dir);
      fmt::print("serving {} review items on http://{}:{}\n", store.size(), host, port);
      std::fflush(stdout);
      server.listen_blocking(port, host);
    } else if (curate->parsed()) {
      std::optional<std::uint64_t> s;
      if (curate_seed_opt->count()) s = curate_seed;
      if (!pool_file.empty()) {
        if (out_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "--out is required with --pool");
        auto pool = deduplicate(load_failure_pool(pool_file));
        auto counts = category_counts(pool);
        auto quota = allocate_quota(counts, target.value_or(pool.size()));
        auto selected = select_cases(pool, quota, derive_seed(s.value_or(g.seed.value_or(0)), "curate"));
        AblationSetting st = ablation_setting_from_id(setting.value_or(0));
        fs::create_directories(out_dir);
        std::string name = fmt::format("{}.jsonl", to_key(st));
        auto r = emit_preference_pairs(selected, st, system_prompt, fs::path(out_dir) / name);
        write_json_atomic(fs::path(out_dir) / fmt::format("{}_recipe.json", to_key(st)),
                          emit_training_recipe(st, name));
        for (const auto& w : r.warnings) fmt::print(stderr, "warning: {}\n", w);
        for (const auto& [c, n] : quota) fmt::print("quota {} {}\n", to_key(c), n);
        fmt::print("pairs {}\n", r.count);
      } else {
        if (s) g.seed = s;
        Run run = open_run(g);
        Json patch = Json::object();
        if (setting) patch["curation"]["settings"] = Json::array({*setting});
        if (target) patch["curation"]["target"] = *target;
        if (!patch.empty()) run.update_config(patch);
        run_stages(run, {Stage::kCurate});
      }
    } else if (report->parsed()) {
      Run run = open_run(g);
      auto outcomes = run.outcomes_with_verdicts();
      auto scales = run.config().scales();
      if (kind == "distribution") {
        auto reports = error_distribution(outcomes, parse_group_by(group_by), scales);
        if (format == "csv") {
          fmt::print("{}", distribution_csv(reports));
        } else {
          fmt::print("{}\n", Json(reports).dump(2));
        }
      } else if (kind == "table") {
        std::vector<ScoreReport> scores;
        for (const auto& [model, scale] : run.config().models) {
          scores.push_back(read_json(run.dir() / "scores" / (run_slug(model, QuantMethod::kBf16) + ".json")));
          for (QuantMethod q : run.config().quant_methods) {
            scores.push_back(read_json(run.dir() / "scores" / (run_slug(model, q) + ".json")));
          }
        }
        auto entries = entries_from_reports(scores);
        auto t = comparison_table(entries);
        fmt::print("{}", format == "csv" ? t.to_csv() : t.to_json().dump(2) + "\n");
      } else {
        std::vector<ModelScale> shown;
        for (const auto& [model, scale] : run.config().models) {
          if (std::find(shown.begin(), shown.end(), scale) == shown.end()) shown.push_back(scale);
        }
        std::sort(shown.begin(), shown.end());
        auto m = radar_matrix(outcomes, shown, scales);
        fmt::print("{}", format == "csv" ? m.to_csv() : m.to_json().dump(2) + "\n");
      }
    } else if (resume->parsed() || run_all->parsed()) {
      Run run = open_run(g);
      run.run_through(Stage::kReport);
      print_status(run.manifest());
    } else if (status->parsed()) {
      require_run_dir(g);
      fs::path m = fs::path(g.run_dir) / "manifest.json";
      if (!fs::exists(m)) throw Error(ErrorCode::kCorruptRun, fmt::format("missing {}", m.string()));
      print_status(read_json(m).get<RunManifest>());
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
