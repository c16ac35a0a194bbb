#include "stylenerf/service.hpp"

#include "stylenerf/error.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <sys/socket.h>

#include <cstdio>
#include <cstdlib>

namespace snerf {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct Service::Impl {
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
};

namespace {

HttpReply json_reply(int status, const nlohmann::json& j) {
  HttpReply r;
  r.status = status;
  r.body = j.dump();
  return r;
}

HttpReply error_reply(int status, const std::string& kind, const std::string& message,
                      const std::string& field = {}) {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  return json_reply(status, j);
}

std::string url_decode(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      out += static_cast<char>(std::strtol(s.substr(i + 1, 2).c_str(), nullptr, 16));
      i += 2;
    } else if (s[i] == '+') {
      out += ' ';
    } else {
      out += s[i];
    }
  }
  return out;
}

std::map<std::string, std::string> parse_query(const std::string& q) {
  std::map<std::string, std::string> out;
  std::size_t start = 0;
  while (start < q.size()) {
    std::size_t amp = q.find('&', start);
    if (amp == std::string::npos) amp = q.size();
    const std::string kv = q.substr(start, amp - start);
    const std::size_t eq = kv.find('=');
    if (!kv.empty()) {
      out[url_decode(kv.substr(0, eq))] = eq == std::string::npos ? "" : url_decode(kv.substr(eq + 1));
    }
    start = amp + 1;
  }
  return out;
}

class InflightSlot {
 public:
  InflightSlot(std::atomic<int>& n, int limit) : n_(n) {
    ok_ = n_.fetch_add(1) < limit;
    if (!ok_) n_.fetch_sub(1);
  }
  ~InflightSlot() {
    if (ok_) n_.fetch_sub(1);
  }
  bool ok() const { return ok_; }

 private:
  std::atomic<int>& n_;
  bool ok_ = false;
};

}  // namespace

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {}

Service::~Service() { stop(); }

void Service::set_model(std::shared_ptr<const Model> m) {
  std::lock_guard lock(model_mutex_);
  model_ = std::move(m);
}

std::shared_ptr<const Model> Service::model() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

HttpReply Service::handle(const std::string& method, const std::string& target,
                          const std::string& body) {
  const std::size_t qpos = target.find('?');
  const std::string path = target.substr(0, qpos);
  const auto query = parse_query(qpos == std::string::npos ? "" : target.substr(qpos + 1));
  const auto m = model();

  if (path == "/health") {
    if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
    if (!m) return json_reply(200, {{"status", "loading"}, {"model", nullptr}, {"resolutions", nlohmann::json::array()}});
    return json_reply(200, {{"status", "ready"},
                            {"model", m->id()},
                            {"resolutions", m->resolutions()},
                            {"images_seen", m->images_seen()},
                            {"max_resolution", cfg_.max_resolution},
                            {"request_budget_ms", cfg_.request_budget_ms}});
  }
  if (path != "/render" && path != "/styles/sample") {
    return error_reply(404, "not_found", "no route " + path);
  }
  if (!m) {
    auto r = error_reply(503, "loading", "model is still loading");
    r.headers.emplace_back("Retry-After", std::to_string(cfg_.retry_after_s));
    return r;
  }
  try {
    if (path == "/styles/sample") {
      if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
      const auto it = query.find("seed");
      if (it == query.end()) return error_reply(400, "bad_request", "seed is required", "seed");
      std::uint64_t seed = 0;
      double psi = 1.0;
      try {
        std::size_t used = 0;
        if (!it->second.empty() && it->second[0] == '-') throw std::invalid_argument("negative");
        seed = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        return error_reply(400, "bad_request", "seed must be a non-negative integer", "seed");
      }
      if (auto t = query.find("truncation"); t != query.end()) {
        try {
          psi = std::stod(t->second);
        } catch (const std::exception&) {
          psi = -1;
        }
        if (!(psi >= 0 && psi <= 1)) return error_reply(400, "bad_request", "truncation outside [0, 1]", "truncation");
      }
      auto j = style_digest(m->generator().style_for_seed(seed, psi));
      j["seed"] = seed;
      j["truncation"] = psi;
      return json_reply(200, j);
    }
    if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      return error_reply(400, "bad_json", e.what(), "body");
    }
    const RenderRequest req = parse_render_request(j, *m);
    if (!req.checkpoint.empty() && req.checkpoint != m->id()) {
      return error_reply(404, "unknown_checkpoint", "checkpoint '" + req.checkpoint + "' is not loaded", "checkpoint");
    }
    if (req.resolution > cfg_.max_resolution) {
      return error_reply(400, "bad_request", "resolution above the service limit", "resolution");
    }
    InflightSlot slot(inflight_, cfg_.max_inflight);
    if (!slot.ok()) {
      auto r = error_reply(503, "busy", "render capacity exhausted; retry later");
      r.headers.emplace_back("Retry-After", std::to_string(cfg_.retry_after_s));
      return r;
    }
    const RenderResult out = render_request(*m, req);
    const auto png = encode_png(out.image);
    HttpReply r;
    r.content_type = "image/png";
    r.body.assign(png.begin(), png.end());
    char ms[32];
    std::snprintf(ms, sizeof ms, "%.3f", out.millis);
    r.headers.emplace_back("X-Render-Millis", ms);
    return r;
  } catch (const RequestError& e) {
    return error_reply(400, "bad_request", e.what(), e.field());
  } catch (const ArgumentError& e) {
    return error_reply(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

std::string Service::stream_frame(nlohmann::json& session, const std::string& message,
                                  bool lossless, double* millis) {
  const auto m = model();
  if (!m) throw RequestError("model", "still loading");
  nlohmann::json update;
  try {
    update = nlohmann::json::parse(message);
  } catch (const nlohmann::json::parse_error& e) {
    throw RequestError("body", e.what());
  }
  if (!update.is_object()) throw RequestError("body", "expected a JSON object");
  nlohmann::json next = session;
  // seed and w are alternatives; an update naming one drops the other
  if (update.contains("seed")) next.erase("w");
  if (update.contains("w")) next.erase("seed");
  next.merge_patch(update);
  if (!next.contains("seed") && !next.contains("w")) next["seed"] = 0;
  const RenderRequest req = parse_render_request(next, *m);
  if (!req.checkpoint.empty() && req.checkpoint != m->id()) throw RequestError("checkpoint", "not loaded");
  if (req.resolution > cfg_.max_resolution) throw RequestError("resolution", "above the service limit");
  session = std::move(next);
  const RenderResult out = render_request(*m, req);
  if (millis) *millis = out.millis;
  const auto bytes = lossless ? encode_png(out.image) : encode_jpeg(out.image, 85);
  return std::string(bytes.begin(), bytes.end());
}

int Service::start() {
  if (running_) return port_;
  auto& acc = impl_->acceptor;
  const tcp::endpoint ep(asio::ip::make_address(cfg_.host), static_cast<unsigned short>(cfg_.port));
  acc.open(ep.protocol());
  acc.set_option(asio::socket_base::reuse_address(true));
  acc.bind(ep);
  acc.listen();
  port_ = acc.local_endpoint().port();
  running_ = true;
  acceptor_thread_ = std::thread([this] { accept_loop(); });
  return port_;
}

void Service::stop() {
  if (!running_.exchange(false)) return;
  beast::error_code ec;
  ::shutdown(impl_->acceptor.native_handle(), SHUT_RDWR);
  if (acceptor_thread_.joinable()) acceptor_thread_.join();
  impl_->acceptor.close(ec);
  std::unique_lock lock(sessions_mutex_);
  for (int fd : session_fds_) ::shutdown(fd, SHUT_RDWR);
  sessions_cv_.wait(lock, [this] { return session_fds_.empty(); });
}

void Service::accept_loop() {
  while (running_) {
    auto sock = std::make_shared<tcp::socket>(impl_->ioc);
    beast::error_code ec;
    impl_->acceptor.accept(*sock, ec);
    if (ec) {
      if (!running_) break;
      continue;
    }
    {
      std::lock_guard lock(sessions_mutex_);
      session_fds_.insert(sock->native_handle());
    }
    std::thread([this, sock] { session(sock); }).detach();
  }
}

void Service::session(std::shared_ptr<void> conn) {
  auto sock = std::static_pointer_cast<tcp::socket>(conn);
  const int fd = sock->native_handle();
  beast::error_code ec;
  beast::flat_buffer buf;
  try {
    for (;;) {
      http::request_parser<http::string_body> parser;
      parser.body_limit(16 * 1024 * 1024);
      http::read(*sock, buf, parser, ec);
      if (ec) break;
      auto req = parser.release();
      if (websocket::is_upgrade(req)) {
        const std::string target(req.target());
        const std::string path = target.substr(0, target.find('?'));
        if (path != "/stream") {
          http::response<http::string_body> res{http::status::not_found, req.version()};
          res.set(http::field::content_type, "application/json");
          res.body() = error_reply(404, "not_found", "no websocket route " + path).body;
          res.prepare_payload();
          http::write(*sock, res, ec);
          break;
        }
        const auto q = parse_query(target.find('?') == std::string::npos ? "" : target.substr(target.find('?') + 1));
        const bool lossless = q.count("lossless") && q.at("lossless") != "0" && q.at("lossless") != "false";
        websocket::stream<tcp::socket&> ws(*sock);
        ws.accept(req, ec);
        if (ec) break;
        nlohmann::json state = nlohmann::json::object();
        long frame = 0;
        for (;;) {
          beast::flat_buffer msg;
          ws.read(msg, ec);
          if (ec) break;
          const std::string text = beast::buffers_to_string(msg.data());
          try {
            double ms = 0;
            const std::string img = stream_frame(state, text, lossless, &ms);
            ws.text(true);
            ws.write(asio::buffer(nlohmann::json({{"frame", frame++},
                                                  {"millis", ms},
                                                  {"format", lossless ? "png" : "jpeg"},
                                                  {"bytes", img.size()}})
                                      .dump()),
                     ec);
            if (ec) break;
            ws.binary(true);
            ws.write(asio::buffer(img), ec);
          } catch (const RequestError& e) {
            ws.text(true);
            ws.write(asio::buffer(nlohmann::json({{"error", "bad_request"}, {"field", e.field()}, {"message", e.what()}}).dump()), ec);
          } catch (const std::exception& e) {
            ws.text(true);
            ws.write(asio::buffer(nlohmann::json({{"error", "internal"}, {"message", e.what()}}).dump()), ec);
          }
          if (ec) break;
        }
        break;
      }
      const HttpReply r = this->handle(std::string(req.method_string()), std::string(req.target()), req.body());
      http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
      res.set(http::field::server, "stylenerf");
      res.set(http::field::content_type, r.content_type);
      for (const auto& [k, v] : r.headers) res.set(k, v);
      res.keep_alive(req.keep_alive());
      res.body() = r.body;
      res.prepare_payload();
      http::write(*sock, res, ec);
      if (ec || !req.keep_alive()) break;
    }
  } catch (const std::exception&) {
    // connection-level failure; drop the client
  }
  sock->shutdown(tcp::socket::shutdown_both, ec);
  sock->close(ec);
  std::lock_guard lock(sessions_mutex_);
  session_fds_.erase(fd);
  sessions_cv_.notify_all();
}

}  // namespace snerf
