#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "jenkins/loop.hpp"

namespace jenkins::service {

inline constexpr int kProtocolVersion = 1;

/// Wire protocol state machine for one connection, independent of the transport.
class ProtocolSession {
 public:
  struct Reply {
    std::vector<nlohmann::json> frames;
    bool close = false;
  };

  explicit ProtocolSession(const loop::LoopConfig& config);

  Reply on_message(std::string_view text);
  /// A bin period passed with no `vel`: advance with zero velocity.
  Reply on_idle();

  bool greeted() const { return session_ != nullptr; }
  std::uint64_t bin() const { return session_ ? session_->bin() : 0; }

  static nlohmann::json error_frame(const std::string& msg);

 private:
  Reply advance(const Vec2& velocity);

  loop::LoopConfig config_;
  std::unique_ptr<loop::SessionState> session_;
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  /// 0 picks a free port; Service::port() reports it.
  std::uint16_t port = 8080;
  /// Zero-velocity bin cadence while a greeted client is silent; 0 disables it.
  std::chrono::milliseconds idle_tick{20};
  /// Outgoing frames buffered per connection before the oldest are dropped.
  std::size_t egress_capacity = 512;
  int threads = 1;
};

/// HTTP (`/health`, `/model/info`) and WebSocket sessions on one port.
class Service {
 public:
  Service(loop::LoopConfig config, nlohmann::json model_info, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts the worker threads; returns the bound port.
  std::uint16_t start();
  void stop();
  std::uint16_t port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace jenkins::service
