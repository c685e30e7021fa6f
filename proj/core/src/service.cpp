#include "jenkins/service.hpp"

#include <cmath>
#include <deque>
#include <optional>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>

namespace jenkins::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

// ---------------------------------------------------------------- protocol

ProtocolSession::ProtocolSession(const loop::LoopConfig& config) : config_(config) { config_.validate(); }

nlohmann::json ProtocolSession::error_frame(const std::string& msg) { return {{"type", "error"}, {"msg", msg}}; }

ProtocolSession::Reply ProtocolSession::on_message(std::string_view text) {
  Reply reply;
  nlohmann::json msg;
  try {
    msg = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    reply.frames.push_back(error_frame("malformed JSON"));
    reply.close = !greeted();
    return reply;
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    reply.frames.push_back(error_frame("message must be an object with a string 'type'"));
    reply.close = !greeted();
    return reply;
  }
  const std::string type = msg["type"];
  if (!greeted()) {
    if (type != "hello") {
      reply.frames.push_back(error_frame("expected 'hello' first"));
      reply.close = true;
      return reply;
    }
    if (!msg.contains("version") || !msg["version"].is_number_integer() || msg["version"] != kProtocolVersion) {
      reply.frames.push_back(error_frame("unsupported protocol version"));
      reply.close = true;
      return reply;
    }
    session_ = std::make_unique<loop::SessionState>(config_);
    reply.frames.push_back({{"type", "ready"}, {"neurons", kNeurons}, {"bin_ms", kBinMs}});
    return reply;
  }
  if (type == "hello") {
    reply.frames.push_back(error_frame("already greeted"));
    return reply;
  }
  if (type != "vel") {
    reply.frames.push_back(error_frame("unknown message type '" + type + "'"));
    return reply;
  }
  Vec2 v;
  for (int c = 0; c < 2; ++c) {
    const char* key = c == 0 ? "vx" : "vy";
    if (!msg.contains(key) || !msg[key].is_number() || !std::isfinite(msg[key].get<double>())) {
      reply.frames.push_back(error_frame(std::string(key) + " must be a finite number"));
      return reply;
    }
    v[c] = msg[key].get<double>();
  }
  return advance(v);
}

ProtocolSession::Reply ProtocolSession::on_idle() {
  if (!greeted()) return {};
  return advance(Vec2::Zero());
}

ProtocolSession::Reply ProtocolSession::advance(const Vec2& velocity) {
  Reply reply;
  try {
    const loop::BinOutput out = session_->step_live(velocity);
    reply.frames.push_back({{"type", "spikes"}, {"bin", out.bin}, {"counts", out.counts}});
    reply.frames.push_back({{"type", "arm"},
                            {"bin", out.bin},
                            {"x", out.arm.position.x()},
                            {"y", out.arm.position.y()},
                            {"angles", out.arm.angles}});
  } catch (const Error& e) {
    reply.frames.push_back(error_frame(e.what()));
  }
  return reply;
}

// ---------------------------------------------------------------- transport

namespace {

struct Shared {
  loop::LoopConfig config;
  std::string model_info;
  ServiceOptions options;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, std::shared_ptr<const Shared> shared)
      : ws_(std::move(socket)), idle_(ws_.get_executor()), shared_(std::move(shared)), protocol_(shared_->config) {}

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->do_read();
    });
  }

 private:
  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      idle_.cancel();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    auto reply = protocol_.on_message(text);
    enqueue(std::move(reply.frames));
    if (reply.close) {
      closing_ = true;
      idle_.cancel();
      if (!writing_) do_write();
      return;
    }
    arm_idle();
    do_read();
  }

  void arm_idle() {
    if (shared_->options.idle_tick.count() <= 0 || !protocol_.greeted()) return;
    idle_.expires_after(shared_->options.idle_tick);
    idle_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closing_) return;
      self->enqueue(self->protocol_.on_idle().frames);
      self->arm_idle();
    });
  }

  void enqueue(std::vector<nlohmann::json> frames) {
    for (auto& f : frames) {
      if (queue_.size() >= shared_->options.egress_capacity) {
        queue_.pop_front();
        ++dropped_;
      }
      queue_.push_back(std::move(f));
    }
    if (!writing_) do_write();
  }

  void do_write() {
    if (queue_.empty()) {
      writing_ = false;
      if (closing_) {
        writing_ = true;
        ws_.async_close(websocket::close_code::policy_error, [self = shared_from_this()](beast::error_code) {});
      }
      return;
    }
    writing_ = true;
    nlohmann::json frame = std::move(queue_.front());
    queue_.pop_front();
    if (dropped_ > 0) frame["dropped"] = dropped_;
    out_ = frame.dump();
    ws_.text(true);
    ws_.async_write(net::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->idle_.cancel();
        return;
      }
      self->do_write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer idle_;
  std::shared_ptr<const Shared> shared_;
  ProtocolSession protocol_;
  beast::flat_buffer buffer_;
  std::deque<nlohmann::json> queue_;
  std::string out_;
  std::uint64_t dropped_ = 0;
  bool writing_ = false;
  bool closing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<const Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void start() { do_read(); }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), shared_)->start(std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(req_.keep_alive());
    res->set(http::field::server, "jenkins");
    const auto target = std::string(req_.target());
    if (req_.method() != http::verb::get) {
      res->result(http::status::method_not_allowed);
      res->set(http::field::content_type, "text/plain");
      res->body() = "method not allowed";
    } else if (target == "/health") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "text/plain");
      res->body() = "ok";
    } else if (target == "/model/info") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "application/json");
      res->body() = shared_->model_info;
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  std::shared_ptr<const Shared> shared_;
};

}  // namespace

struct Service::Impl {
  std::shared_ptr<Shared> shared;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::vector<std::thread> threads;
  std::optional<net::executor_work_guard<net::io_context::executor_type>> work;
  std::uint16_t bound_port = 0;

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec == net::error::operation_aborted) return;
      if (!ec) std::make_shared<HttpSession>(std::move(socket), shared)->start();
      if (acceptor.is_open()) do_accept();
    });
  }
};

Service::Service(loop::LoopConfig config, nlohmann::json model_info, ServiceOptions options)
    : impl_(std::make_unique<Impl>()) {
  config.validate();
  if (options.egress_capacity == 0) throw Error("egress capacity must be positive");
  impl_->shared = std::make_shared<Shared>(Shared{std::move(config), model_info.dump(), std::move(options)});
}

Service::~Service() { stop(); }

std::uint16_t Service::start() {
  const auto& opts = impl_->shared->options;
  const tcp::endpoint endpoint(net::ip::make_address(opts.host), opts.port);
  impl_->acceptor.open(endpoint.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(endpoint);
  impl_->acceptor.listen(net::socket_base::max_listen_connections);
  impl_->bound_port = impl_->acceptor.local_endpoint().port();
  impl_->work.emplace(net::make_work_guard(impl_->ioc));
  impl_->do_accept();
  for (int i = 0; i < std::max(1, opts.threads); ++i) impl_->threads.emplace_back([this] { impl_->ioc.run(); });
  return impl_->bound_port;
}

void Service::stop() {
  if (!impl_ || impl_->threads.empty()) return;
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  impl_->work.reset();
  impl_->ioc.stop();
  for (auto& t : impl_->threads) {
    if (t.joinable()) t.join();
  }
  impl_->threads.clear();
}

std::uint16_t Service::port() const { return impl_->bound_port; }

}  // namespace jenkins::service
