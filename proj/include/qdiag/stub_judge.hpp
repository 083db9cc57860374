#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "qdiag/io.hpp"

namespace httplib {
class Server;
}

namespace qdiag {

/// One scripted reply. A non-empty `raw_body` is sent verbatim instead of a
/// chat-completions envelope around `content`.
struct StubResponse {
  int status = 200;
  std::string content;
  std::string raw_body;
  int delay_ms = 0;
};

/// Matches requests by model name and/or a prompt substring (empty means
/// any). Matching requests consume `responses` in order; the last one
/// repeats once the script is exhausted.
struct StubRule {
  std::string model;
  std::string prompt_contains;
  std::vector<StubResponse> responses;
};

struct StubScenario {
  std::vector<StubRule> rules;
  StubResponse fallback{500, "", "{\"error\":\"no scenario rule matched\"}", 0};
  std::string require_api_key;  // when set, other bearer tokens get 401
  int default_delay_ms = 0;
};

void from_json(const Json& j, StubResponse& r);
void from_json(const Json& j, StubScenario& s);
void to_json(Json& j, const StubResponse& r);
void to_json(Json& j, const StubScenario& s);
StubScenario load_scenario(const std::filesystem::path& path);

/// Scriptable OpenAI-compatible judge endpoint for tests and offline runs.
/// Records every request body and the peak number of concurrent requests
/// per model.
class StubJudgeServer {
 public:
  explicit StubJudgeServer(StubScenario scenario);
  ~StubJudgeServer();

  StubJudgeServer(const StubJudgeServer&) = delete;
  StubJudgeServer& operator=(const StubJudgeServer&) = delete;

  /// Binds 127.0.0.1 (port 0 picks a free port) and serves on a background
  /// thread. Returns the bound port.
  int start(int port = 0);
  /// Blocks serving on the calling thread.
  void listen_blocking(const std::string& host, int port);
  void stop();

  std::string base_url() const;
  std::size_t request_count() const;
  std::vector<std::string> request_log() const;
  /// Request bodies sorted, so concurrent runs compare equal.
  std::vector<std::string> sorted_request_log() const;
  int max_in_flight(const std::string& model) const;
  void clear_log();

 private:
  struct Reply {
    int status;
    std::string body;
    int delay_ms;
  };
  Reply handle(const std::string& body, const std::string& auth_header);
  void install_routes();

  StubScenario scenario_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;

  mutable std::mutex mu_;
  std::vector<std::size_t> rule_cursor_;
  std::vector<std::string> log_;
  std::map<std::string, int> in_flight_;
  std::map<std::string, int> max_in_flight_;
  std::size_t reply_serial_ = 0;
};

}  // namespace qdiag
