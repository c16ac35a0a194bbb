#include "micro_config.hpp"
#include "stylenerf/service.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>
#include <httplib.h>

#include <future>

using namespace snerf;

namespace {

std::shared_ptr<const Model> micro_model() {
  static auto m = Model::untrained(fixtures::micro_run());
  return m;
}

ServiceConfig local(int inflight = 4) {
  ServiceConfig c;
  c.host = "127.0.0.1";
  c.port = 0;
  c.max_inflight = inflight;
  return c;
}

const std::string kBody = R"({"pose": {"theta": 0.1, "phi": 0.2}, "seed": 3, "resolution": 16})";

std::string ws_exchange(int port, const std::string& target, const std::vector<std::string>& msgs,
                        std::vector<std::string>* meta) {
  namespace beast = boost::beast;
  boost::asio::io_context ioc;
  boost::asio::ip::tcp::resolver resolver(ioc);
  beast::websocket::stream<boost::asio::ip::tcp::socket> ws(ioc);
  boost::asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
  ws.handshake("127.0.0.1", target);
  std::string last;
  for (const auto& m : msgs) {
    ws.write(boost::asio::buffer(m));
    beast::flat_buffer b;
    ws.read(b);
    meta->push_back(beast::buffers_to_string(b.data()));
    if (meta->back().find("\"error\"") != std::string::npos) continue;
    beast::flat_buffer img;
    ws.read(img);
    last = beast::buffers_to_string(img.data());
  }
  ws.close(beast::websocket::close_code::normal);
  return last;
}

}  // namespace

TEST(Service, HealthLoadingThenReady) {
  Service s(local());
  const int port = s.start();
  httplib::Client c("127.0.0.1", port);
  auto r = c.Get("/health");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(nlohmann::json::parse(r->body)["status"], "loading");
  auto busy = c.Post("/render", kBody, "application/json");
  ASSERT_TRUE(busy);
  EXPECT_EQ(busy->status, 503);
  EXPECT_TRUE(busy->has_header("Retry-After"));
  s.set_model(micro_model());
  r = c.Get("/health");
  auto j = nlohmann::json::parse(r->body);
  EXPECT_EQ(j["status"], "ready");
  EXPECT_EQ(j["model"], "untrained");
  EXPECT_EQ(j["resolutions"], nlohmann::json({8, 16}));
  s.stop();
}

TEST(Service, RenderDeterministicPng) {
  Service s(local());
  s.set_model(micro_model());
  httplib::Client c("127.0.0.1", s.start());
  auto a = c.Post("/render", kBody, "application/json");
  auto b = c.Post("/render", kBody, "application/json");
  ASSERT_TRUE(a && b);
  ASSERT_EQ(a->status, 200) << a->body;
  EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(a->body.substr(1, 3), "PNG");
  EXPECT_EQ(a->body, b->body);
  EXPECT_GT(std::stod(a->get_header_value("X-Render-Millis")), 0.0);
  auto other = c.Post("/render", R"({"pose": {"theta": 0.1, "phi": 0.2}, "seed": 4, "resolution": 16})",
                      "application/json");
  EXPECT_NE(other->body, a->body);
}

TEST(Service, BadRequests) {
  Service s(local());
  s.set_model(micro_model());
  httplib::Client c("127.0.0.1", s.start());
  auto field_of = [&](const std::string& body) {
    auto r = c.Post("/render", body, "application/json");
    EXPECT_EQ(r->status, 400) << body;
    return nlohmann::json::parse(r->body).value("field", "");
  };
  EXPECT_EQ(field_of("{not json"), "body");
  EXPECT_EQ(field_of(R"({"seed": 1})"), "pose");
  EXPECT_EQ(field_of(R"({"pose": {"theta": 0, "phi": "x"}, "seed": 1})"), "pose.phi");
  EXPECT_EQ(field_of(R"({"pose": {"theta": 0, "phi": 0}})"), "seed");
  EXPECT_EQ(field_of(R"({"pose": {"theta": 0, "phi": 0}, "seed": 1, "w": [0]})"), "seed");
  EXPECT_EQ(field_of(R"({"pose": {"theta": 0, "phi": 0}, "seed": 1, "resolution": 12})"), "resolution");
  EXPECT_EQ(field_of(R"({"pose": {"theta": 0, "phi": 0}, "seed": 1, "mix": {"seed_b": 2, "crossover_layer": 99}})"),
            "mix.crossover_layer");
  EXPECT_EQ(field_of(R"({"pose": {"theta": 0, "phi": 0}, "seed": 1, "colour": 2})"), "colour");
  auto nf = c.Post("/render", R"({"checkpoint": "nope", "pose": {"theta": 0, "phi": 0}, "seed": 1})",
                   "application/json");
  EXPECT_EQ(nf->status, 404);
  EXPECT_EQ(c.Get("/nowhere")->status, 404);
  EXPECT_EQ(c.Get("/render")->status, 405);
}

TEST(Service, StyleSample) {
  Service s(local());
  s.set_model(micro_model());
  httplib::Client c("127.0.0.1", s.start());
  auto a = c.Get("/styles/sample?seed=7");
  auto b = c.Get("/styles/sample?seed=7");
  ASSERT_EQ(a->status, 200);
  EXPECT_EQ(a->body, b->body);
  auto j = nlohmann::json::parse(a->body);
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["dim"], 8);
  EXPECT_EQ(j["digest"].get<std::string>().size(), 8u);
  EXPECT_NE(nlohmann::json::parse(c.Get("/styles/sample?seed=8")->body)["digest"], j["digest"]);
  EXPECT_EQ(c.Get("/styles/sample")->status, 400);
  EXPECT_EQ(c.Get("/styles/sample?seed=-1")->status, 400);
  EXPECT_EQ(c.Get("/styles/sample?seed=1&truncation=2")->status, 400);
}

TEST(Service, ExplicitStyleMatchesSeed) {
  Service s(local());
  s.set_model(micro_model());
  httplib::Client c("127.0.0.1", s.start());
  auto w = nlohmann::json::parse(c.Get("/styles/sample?seed=3")->body)["w"];
  nlohmann::json body = {{"pose", {{"theta", 0.1}, {"phi", 0.2}}}, {"w", w}, {"resolution", 16}};
  auto a = c.Post("/render", body.dump(), "application/json");
  auto b = c.Post("/render", kBody, "application/json");
  ASSERT_EQ(a->status, 200) << a->body;
  EXPECT_EQ(a->body, b->body);
}

TEST(Service, ConcurrentEqualsSerial) {
  Service s(local(2));
  s.set_model(micro_model());
  const int port = s.start();
  httplib::Client c("127.0.0.1", port);
  const std::string serial = c.Post("/render", kBody, "application/json")->body;
  std::vector<std::future<std::pair<int, std::string>>> fs;
  for (int i = 0; i < 6; ++i) {
    fs.push_back(std::async(std::launch::async, [port] {
      httplib::Client cc("127.0.0.1", port);
      auto r = cc.Post("/render", kBody, "application/json");
      return std::make_pair(r->status, r->status == 503 ? r->get_header_value("Retry-After") : r->body);
    }));
  }
  int ok = 0;
  for (auto& f : fs) {
    auto [status, body] = f.get();
    if (status == 200) {
      EXPECT_EQ(body, serial);
      ++ok;
    } else {
      EXPECT_EQ(status, 503);
      EXPECT_EQ(body, "1");
    }
  }
  EXPECT_GE(ok, 1);
}

TEST(Service, HealthDuringRender) {
  Service s(local());
  s.set_model(micro_model());
  const int port = s.start();
  auto render = std::async(std::launch::async, [port] {
    httplib::Client cc("127.0.0.1", port);
    return cc.Post("/render", kBody, "application/json")->status;
  });
  httplib::Client c("127.0.0.1", port);
  EXPECT_EQ(c.Get("/health")->status, 200);
  EXPECT_EQ(render.get(), 200);
}

TEST(Service, StreamFrames) {
  Service s(local());
  s.set_model(micro_model());
  const int port = s.start();
  std::vector<std::string> meta;
  const std::string jpeg = ws_exchange(
      port, "/stream",
      {R"({"pose": {"theta": 0.1, "phi": 0.2}, "seed": 3, "resolution": 16})", R"({"pose": {"phi": "bad"}})",
       R"({"pose": {"theta": 0.1, "phi": 0.3}})"},
      &meta);
  ASSERT_EQ(meta.size(), 3u);
  EXPECT_EQ(nlohmann::json::parse(meta[0])["format"], "jpeg");
  EXPECT_EQ(nlohmann::json::parse(meta[1])["field"], "pose.phi");
  EXPECT_EQ(nlohmann::json::parse(meta[2])["frame"], 1);
  EXPECT_EQ(static_cast<unsigned char>(jpeg[0]), 0xFF);
  EXPECT_EQ(static_cast<unsigned char>(jpeg[1]), 0xD8);

  meta.clear();
  const std::string png = ws_exchange(port, "/stream?lossless=1", {kBody}, &meta);
  httplib::Client c("127.0.0.1", port);
  EXPECT_EQ(png, c.Post("/render", kBody, "application/json")->body);
}

TEST(Service, StopWithOpenConnection) {
  auto s = std::make_unique<Service>(local());
  s->set_model(micro_model());
  httplib::Client c("127.0.0.1", s->start());
  c.set_keep_alive(true);
  EXPECT_EQ(c.Get("/health")->status, 200);
  s->stop();
  s.reset();
  SUCCEED();
}
