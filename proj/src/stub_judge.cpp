#include "qdiag/stub_judge.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>

#include "httplib.h"
#include "qdiag/error.hpp"

namespace qdiag {

void from_json(const Json& j, StubResponse& r) {
  r.status = j.value("status", 200);
  r.content = j.value("content", "");
  r.raw_body = j.value("raw_body", "");
  r.delay_ms = j.value("delay_ms", 0);
}

void to_json(Json& j, const StubResponse& r) {
  j = Json{{"status", r.status}, {"content", r.content}, {"delay_ms", r.delay_ms}};
  if (!r.raw_body.empty()) j["raw_body"] = r.raw_body;
}

void from_json(const Json& j, StubScenario& s) {
  s.rules.clear();
  for (const auto& rj : j.value("rules", Json::array())) {
    StubRule rule;
    rule.model = rj.value("model", "");
    rule.prompt_contains = rj.value("prompt_contains", "");
    rule.responses = rj.at("responses").get<std::vector<StubResponse>>();
    if (rule.responses.empty()) throw Error(ErrorCode::kConfigError, "stub rule without responses");
    s.rules.push_back(std::move(rule));
  }
  if (j.contains("fallback")) s.fallback = j.at("fallback").get<StubResponse>();
  s.require_api_key = j.value("require_api_key", "");
  s.default_delay_ms = j.value("default_delay_ms", 0);
}

void to_json(Json& j, const StubScenario& s) {
  Json rules = Json::array();
  for (const auto& r : s.rules) {
    rules.push_back(Json{{"model", r.model}, {"prompt_contains", r.prompt_contains}, {"responses", r.responses}});
  }
  j = Json{{"rules", rules}, {"fallback", s.fallback}, {"default_delay_ms", s.default_delay_ms}};
  if (!s.require_api_key.empty()) j["require_api_key"] = s.require_api_key;
}

StubScenario load_scenario(const std::filesystem::path& path) { return read_json(path).get<StubScenario>(); }

StubJudgeServer::StubJudgeServer(StubScenario scenario)
    : scenario_(std::move(scenario)), server_(std::make_unique<httplib::Server>()) {
  rule_cursor_.assign(scenario_.rules.size(), 0);
  server_->new_task_queue = [] { return new httplib::ThreadPool(64); };
  install_routes();
}

StubJudgeServer::~StubJudgeServer() { stop(); }

void StubJudgeServer::install_routes() {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    Reply reply = handle(req.body, req.get_header_value("Authorization"));
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  server_->Post(R"(.*/v1/chat/completions)", handler);
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"ok\":true}", "application/json");
  });
}

StubJudgeServer::Reply StubJudgeServer::handle(const std::string& body, const std::string& auth_header) {
  Json req = Json::parse(body, nullptr, false);
  std::string model = (!req.is_discarded() && req.contains("model") && req["model"].is_string())
                          ? req["model"].get<std::string>()
                          : std::string();
  std::string prompt;
  if (!req.is_discarded() && req.contains("messages") && req["messages"].is_array()) {
    for (const auto& m : req["messages"]) {
      if (m.value("role", "") == "user" && m.contains("content") && m["content"].is_string()) {
        prompt += m["content"].get<std::string>();
      }
    }
  }

  StubResponse chosen = scenario_.fallback;
  std::size_t serial = 0;
  {
    std::lock_guard lock(mu_);
    log_.push_back(body);
    serial = ++reply_serial_;
    int now = ++in_flight_[model];
    max_in_flight_[model] = std::max(max_in_flight_[model], now);

    if (!scenario_.require_api_key.empty() && auth_header != "Bearer " + scenario_.require_api_key) {
      chosen = StubResponse{401, "", "{\"error\":\"unauthorized\"}", 0};
    } else {
      for (std::size_t i = 0; i < scenario_.rules.size(); ++i) {
        const StubRule& rule = scenario_.rules[i];
        if (!rule.model.empty() && rule.model != model) continue;
        if (!rule.prompt_contains.empty() && prompt.find(rule.prompt_contains) == std::string::npos) continue;
        std::size_t idx = std::min(rule_cursor_[i], rule.responses.size() - 1);
        ++rule_cursor_[i];
        chosen = rule.responses[idx];
        break;
      }
    }
  }

  Reply reply;
  reply.status = chosen.status;
  reply.delay_ms = chosen.delay_ms > 0 ? chosen.delay_ms : scenario_.default_delay_ms;
  if (!chosen.raw_body.empty()) {
    reply.body = chosen.raw_body;
  } else if (chosen.status == 200) {
    Json env{{"id", fmt::format("stub-{}", serial)},
             {"object", "chat.completion"},
             {"model", model},
             {"choices", Json::array({Json{{"index", 0},
                                           {"message", Json{{"role", "assistant"}, {"content", chosen.content}}},
                                           {"finish_reason", "stop"}}})}};
    reply.body = env.dump();
  } else {
    reply.body = Json{{"error", Json{{"message", chosen.content}, {"code", chosen.status}}}}.dump();
  }

  // The in-flight window spans the scripted delay, so release after it.
  if (reply.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(reply.delay_ms));
  reply.delay_ms = 0;
  {
    std::lock_guard lock(mu_);
    --in_flight_[model];
  }
  return reply;
}

int StubJudgeServer::start(int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port("127.0.0.1");
  } else {
    if (!server_->bind_to_port("127.0.0.1", port)) {
      throw Error(ErrorCode::kIoFailure, fmt::format("cannot bind stub judge to port {}", port));
    }
    port_ = port;
  }
  if (port_ <= 0) throw Error(ErrorCode::kIoFailure, "cannot bind stub judge server");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void StubJudgeServer::listen_blocking(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) {
    throw Error(ErrorCode::kIoFailure, fmt::format("cannot listen on {}:{}", host, port));
  }
}

void StubJudgeServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string StubJudgeServer::base_url() const { return fmt::format("http://127.0.0.1:{}", port_); }

std::size_t StubJudgeServer::request_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

std::vector<std::string> StubJudgeServer::request_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::vector<std::string> StubJudgeServer::sorted_request_log() const {
  auto log = request_log();
  std::sort(log.begin(), log.end());
  return log;
}

int StubJudgeServer::max_in_flight(const std::string& model) const {
  std::lock_guard lock(mu_);
  auto it = max_in_flight_.find(model);
  return it == max_in_flight_.end() ? 0 : it->second;
}

void StubJudgeServer::clear_log() {
  std::lock_guard lock(mu_);
  log_.clear();
}

}  // namespace qdiag
