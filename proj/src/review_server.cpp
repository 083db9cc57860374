#include "qdiag/review_server.hpp"

#include <charconv>

#include <fmt/format.h>

#include "httplib.h"
#include "qdiag/error.hpp"

namespace qdiag {

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownItem: return 404;
    case ErrorCode::kAlreadyResolved: return 409;
    case ErrorCode::kNotReviewable: return 409;
    default: return 400;
  }
}

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e, Json extra = Json::object()) {
  extra["error"] = std::string(to_string(e.code()));
  extra["message"] = e.what();
  send_json(res, http_status(e.code()), extra);
}

std::size_t size_param(const httplib::Request& req, const char* name, std::size_t fallback) {
  if (!req.has_param(name)) return fallback;
  std::string v = req.get_param_value(name);
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("bad {} '{}'", name, v));
  }
  return out;
}

// Queue rows omit the bulky per-judge raw replies.
Json queue_row(const ReviewItem& item) {
  Json j = item;
  for (Json& a : j["assessments"]) a.erase("raw_response");
  return j;
}

}  // namespace

ReviewServer::ReviewServer(ReviewStore& store, std::filesystem::path static_dir)
    : store_(store), static_dir_(std::move(static_dir)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

ReviewServer::~ReviewServer() { stop(); }

void ReviewServer::install_routes() {
  auto guarded = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const Json::exception& e) {
        send_json(res, 400, Json{{"error", "InvalidArgument"}, {"message", e.what()}});
      }
    };
  };

  server_->Get("/api/queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
    QueueFilter f;
    if (req.has_param("state")) f.state = parse_review_state(req.get_param_value("state"));
    if (req.has_param("reason")) f.reason = parse_review_reason(req.get_param_value("reason"));
    f.offset = size_param(req, "offset", 0);
    f.limit = size_param(req, "limit", 50);
    QueuePage page = store_.queue_snapshot(f);
    Json items = Json::array();
    for (const auto& item : page.items) items.push_back(queue_row(item));
    send_json(res, 200, Json{{"items", items}, {"total", page.total}, {"offset", f.offset}, {"limit", f.limit}});
  }));

  server_->Get(R"(/api/items/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, Json(store_.get(req.matches[1])));
  }));

  server_->Post(R"(/api/items/([^/]+)/verdict)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  Json body = Json::parse(req.body);
                  VerdictRequest v;
                  v.item_id = req.matches[1];
                  v.label = parse_error_label(body.at("label").get<std::string>());
                  if (body.contains("step") && !body.at("step").is_null()) v.step = body.at("step").get<int>();
                  v.reviewer_id = body.value("reviewer_id", "");
                  v.supersede = body.value("supersede", false);
                  try {
                    send_json(res, 200, Json(store_.record_verdict(v)));
                  } catch (const Error& e) {
                    if (e.code() != ErrorCode::kAlreadyResolved) throw;
                    send_error(res, e, Json{{"history", store_.get(v.item_id).history}});
                  }
                }));

  server_->Get("/api/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
    Json j = store_.stats();
    std::size_t pending = store_.queue_snapshot({ReviewState::kPending}).total;
    j["pending"] = pending;
    j["resolved"] = store_.size() - pending;
    send_json(res, 200, j);
  }));

  server_->Get("/api/taxonomy", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, taxonomy_json());
  });

  if (!static_dir_.empty() && std::filesystem::is_directory(static_dir_)) {
    server_->set_mount_point("/", static_dir_.string());
  }
}

int ReviewServer::start(int port, const std::string& host) {
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw Error(ErrorCode::kIoFailure, fmt::format("cannot bind {}:{}", host, port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void ReviewServer::listen_blocking(int port, const std::string& host) {
  port_ = port;
  if (!server_->listen(host, port)) throw Error(ErrorCode::kIoFailure, fmt::format("cannot listen on {}:{}", host, port));
}

void ReviewServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string ReviewServer::base_url() const { return fmt::format("http://127.0.0.1:{}", port_); }

}  // namespace qdiag
