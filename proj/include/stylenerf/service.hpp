#pragma once

// HTTP + WebSocket rendering service over a shared read-only model.

#include "stylenerf/interface.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <set>
#include <thread>

namespace snerf {

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts accepting; returns the bound port (cfg.port 0 picks one).
  int start();
  void stop();
  /// Atomic replace; null means still loading.
  void set_model(std::shared_ptr<const Model> m);
  std::shared_ptr<const Model> model() const;

  /// Routing without sockets, used by the connection handlers.
  HttpReply handle(const std::string& method, const std::string& target, const std::string& body);

  /// Reply for one WebSocket message given the session's accumulated request.
  /// Returns the encoded frame; throws RequestError on a bad update.
  std::string stream_frame(nlohmann::json& session, const std::string& message, bool lossless,
                           double* millis);

 private:
  struct Impl;
  void accept_loop();
  void session(std::shared_ptr<void> conn);

  ServiceConfig cfg_;
  std::unique_ptr<Impl> impl_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const Model> model_;
  std::atomic<int> inflight_{0};
  std::atomic<bool> running_{false};
  std::thread acceptor_thread_;
  std::mutex sessions_mutex_;
  std::condition_variable sessions_cv_;
  std::set<int> session_fds_;
  int port_ = 0;
};

}  // namespace snerf
