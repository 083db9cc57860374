#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "qdiag/review.hpp"

namespace httplib {
class Server;
}

namespace qdiag {

/// JSON API over a ReviewStore, plus optional static hosting of the review
/// UI bundle:
///   GET  /api/queue?state=&reason=&offset=&limit=
///   GET  /api/items/{id}
///   POST /api/items/{id}/verdict  {label, step, reviewer_id, supersede}
///   GET  /api/stats
///   GET  /api/taxonomy
/// Errors come back as {"error": code, "message": text}; AlreadyResolved is
/// 409 and carries the item's history.
class ReviewServer {
 public:
  explicit ReviewServer(ReviewStore& store, std::filesystem::path static_dir = {});
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds 127.0.0.1 (port 0 picks a free port) and serves on a thread.
  int start(int port = 0, const std::string& host = "127.0.0.1");
  /// Serves on the calling thread until stop().
  void listen_blocking(int port, const std::string& host = "127.0.0.1");
  void stop();

  int port() const { return port_; }
  std::string base_url() const;

 private:
  void install_routes();

  ReviewStore& store_;
  std::filesystem::path static_dir_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace qdiag
