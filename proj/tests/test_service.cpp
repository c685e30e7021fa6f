#include <gtest/gtest.h>

#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>

#include "jenkins/service.hpp"
#include "support.hpp"

using namespace jenkins;
using namespace jenkins::service;
using nlohmann::json;

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

const std::string kHello = R"({"type":"hello","version":1})";

json frame(const ProtocolSession::Reply& r, std::size_t i) { return r.frames.at(i); }

}  // namespace

TEST(Protocol, HelloThenVelocity) {
  ProtocolSession p(fixtures::tiny_loop_config());
  EXPECT_FALSE(p.greeted());
  const auto hello = p.on_message(kHello);
  ASSERT_EQ(hello.frames.size(), 1u);
  EXPECT_EQ(frame(hello, 0), (json{{"type", "ready"}, {"neurons", 192}, {"bin_ms", 20}}));
  EXPECT_FALSE(hello.close);
  EXPECT_TRUE(p.greeted());

  for (int i = 0; i < 3; ++i) {
    const auto r = p.on_message(R"({"type":"vel","vx":12.5,"vy":-3})");
    ASSERT_EQ(r.frames.size(), 2u);
    EXPECT_EQ(frame(r, 0)["type"], "spikes");
    EXPECT_EQ(frame(r, 0)["bin"], i);
    EXPECT_EQ(frame(r, 0)["counts"].size(), 192u);
    EXPECT_EQ(frame(r, 1)["type"], "arm");
    EXPECT_EQ(frame(r, 1)["bin"], i);
    EXPECT_EQ(frame(r, 1)["angles"].size(), 6u);
    EXPECT_TRUE(frame(r, 1)["x"].is_number());
  }
  EXPECT_EQ(p.bin(), 3u);
}

TEST(Protocol, MustGreetFirst) {
  ProtocolSession p(fixtures::tiny_loop_config());
  const auto r = p.on_message(R"({"type":"vel","vx":0,"vy":0})");
  ASSERT_EQ(r.frames.size(), 1u);
  EXPECT_EQ(frame(r, 0)["type"], "error");
  EXPECT_TRUE(r.close);
  EXPECT_TRUE(p.on_idle().frames.empty());
}

TEST(Protocol, VersionMismatchCloses) {
  ProtocolSession p(fixtures::tiny_loop_config());
  EXPECT_TRUE(p.on_message(R"({"type":"hello","version":2})").close);
  EXPECT_TRUE(p.on_message(R"({"type":"hello"})").close);
  EXPECT_FALSE(p.greeted());
}

TEST(Protocol, MalformedInput) {
  ProtocolSession p(fixtures::tiny_loop_config());
  EXPECT_TRUE(p.on_message("{not json").close);
  p.on_message(kHello);
  for (const char* bad : {"{not json", "[1,2]", R"({"type":3})", R"({"type":"vel","vx":null,"vy":0})",
                          R"({"type":"vel","vx":"1","vy":0})", R"({"type":"vel","vx":1})",
                          R"({"type":"vel","vx":1e999,"vy":0})", R"({"type":"jump"})", kHello.c_str()}) {
    const auto r = p.on_message(bad);
    ASSERT_EQ(r.frames.size(), 1u) << bad;
    EXPECT_EQ(frame(r, 0)["type"], "error") << bad;
    EXPECT_TRUE(frame(r, 0)["msg"].is_string());
    EXPECT_FALSE(r.close) << bad;
  }
  EXPECT_EQ(p.bin(), 0u);
}

TEST(Protocol, IdleAdvancesWithZeroVelocity) {
  ProtocolSession idle(fixtures::tiny_loop_config(4));
  ProtocolSession explicit_zero(fixtures::tiny_loop_config(4));
  idle.on_message(kHello);
  explicit_zero.on_message(kHello);
  for (int i = 0; i < 4; ++i) {
    const auto a = idle.on_idle();
    const auto b = explicit_zero.on_message(R"({"type":"vel","vx":0,"vy":0})");
    EXPECT_EQ(a.frames, b.frames);
  }
}

namespace {

class LiveService : public ::testing::Test {
 protected:
  void start(std::chrono::milliseconds idle_tick) {
    ServiceOptions opts;
    opts.port = 0;
    opts.idle_tick = idle_tick;
    service_ = std::make_unique<Service>(fixtures::tiny_loop_config(), json{{"decoder", "tiny"}}, opts);
    port_ = service_->start();
  }
  void TearDown() override {
    if (service_) service_->stop();
  }

  http::response<http::string_body> get(const std::string& target, http::verb verb = http::verb::get) {
    net::io_context ioc;
    beast::tcp_stream stream(ioc);
    stream.connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port_));
    http::request<http::string_body> req{verb, target, 11};
    req.set(http::field::host, "127.0.0.1");
    http::write(stream, req);
    beast::flat_buffer buffer;
    http::response<http::string_body> res;
    http::read(stream, buffer, res);
    beast::error_code ec;
    stream.socket().shutdown(tcp::socket::shutdown_both, ec);
    return res;
  }

  std::unique_ptr<Service> service_;
  std::uint16_t port_ = 0;
};

struct Client {
  net::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};
  beast::flat_buffer buffer;

  explicit Client(std::uint16_t port) {
    ws.next_layer().connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port));
    ws.handshake("127.0.0.1", "/");
  }
  void send(const std::string& text) { ws.write(net::buffer(text)); }
  json receive() {
    buffer.clear();
    ws.read(buffer);
    return json::parse(beast::buffers_to_string(buffer.data()));
  }
};

}  // namespace

TEST_F(LiveService, HealthAndInfo) {
  start(std::chrono::milliseconds(0));
  const auto health = get("/health");
  EXPECT_EQ(health.result(), http::status::ok);
  EXPECT_EQ(health.body(), "ok");
  const auto info = get("/model/info");
  EXPECT_EQ(info.result(), http::status::ok);
  EXPECT_EQ(json::parse(info.body())["decoder"], "tiny");
  EXPECT_EQ(get("/nope").result(), http::status::not_found);
  EXPECT_EQ(get("/health", http::verb::post).result(), http::status::method_not_allowed);
}

TEST_F(LiveService, OneSpikeAndArmFramePerVelocity) {
  start(std::chrono::milliseconds(0));
  Client c(port_);
  c.send(kHello);
  EXPECT_EQ(c.receive()["type"], "ready");
  for (int i = 0; i < 50; ++i) {
    c.send(json{{"type", "vel"}, {"vx", 10.0 * i}, {"vy", -5.0}}.dump());
    const json spikes = c.receive();
    const json arm = c.receive();
    ASSERT_EQ(spikes["type"], "spikes");
    ASSERT_EQ(arm["type"], "arm");
    EXPECT_EQ(spikes["bin"], i);
    EXPECT_EQ(arm["bin"], i);
    EXPECT_FALSE(spikes.contains("dropped"));
  }
  c.send(R"({"type":"vel","vx":null,"vy":0})");
  EXPECT_EQ(c.receive()["type"], "error");
  c.send(R"({"type":"vel","vx":1,"vy":1})");
  EXPECT_EQ(c.receive()["bin"], 50);
  c.ws.close(websocket::close_code::normal);
}

TEST_F(LiveService, ClosesWithoutHello) {
  start(std::chrono::milliseconds(0));
  Client c(port_);
  c.send(R"({"type":"vel","vx":0,"vy":0})");
  EXPECT_EQ(c.receive()["type"], "error");
  beast::error_code ec;
  c.buffer.clear();
  c.ws.read(c.buffer, ec);
  EXPECT_EQ(ec, websocket::error::closed);
}

TEST_F(LiveService, IdleTicksAdvanceBins) {
  start(std::chrono::milliseconds(20));
  Client c(port_);
  c.send(kHello);
  EXPECT_EQ(c.receive()["type"], "ready");
  // Without any velocity the service keeps emitting zero-velocity bins.
  std::uint64_t last_bin = 0;
  int arm_frames = 0;
  while (arm_frames < 10) {
    const json f = c.receive();
    if (f["type"] == "arm") {
      last_bin = f["bin"];
      ++arm_frames;
    }
  }
  EXPECT_GE(last_bin, 9u);
  c.ws.close(websocket::close_code::normal);
}

TEST_F(LiveService, SeveralClientsAreIndependent) {
  start(std::chrono::milliseconds(0));
  Client a(port_), b(port_);
  a.send(kHello);
  b.send(kHello);
  a.receive();
  b.receive();
  for (int i = 0; i < 3; ++i) {
    a.send(R"({"type":"vel","vx":0,"vy":0})");
    EXPECT_EQ(a.receive()["bin"], i);
    a.receive();
  }
  b.send(R"({"type":"vel","vx":0,"vy":0})");
  EXPECT_EQ(b.receive()["bin"], 0);
}
