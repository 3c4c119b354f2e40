#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "biped/env.hpp"
#include "biped/ppo.hpp"
#include "biped/teleop/protocol.hpp"

namespace biped::teleop {

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  double rate_hz = 50.0;       // control steps per wall-clock second
  int decimation = 1;          // broadcast every n-th control step
  double driver_window = 2.0;  // s without commands before the driver role is released
  std::uint64_t seed = 0;
};

struct ServerStatus {
  std::uint64_t steps = 0;
  std::uint64_t episode = 0;
  double sim_time = 0.0;
  double wall_time = 0.0;
  std::size_t subscribers = 0;
  Vec3 command = Vec3::Zero();
};

/// One simulated robot driven by a policy at wall-clock rate. HTTP `GET /health` reports
/// version and checkpoint id; `/session` upgrades to a WebSocket that streams frames and
/// takes command / reset messages. Only one client (the driver) steers at a time.
class TeleopServer {
 public:
  TeleopServer(PolicySnapshot policy, EnvConfig env, ServerOptions options);
  ~TeleopServer();

  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Binds and starts the network and simulation threads. Throws std::runtime_error if the
  /// port cannot be bound.
  void start();
  void stop();

  unsigned short port() const;
  ServerStatus status() const;
  nlohmann::json health() const;

 private:
  class Impl;
  std::shared_ptr<Impl> impl_;
};

}  // namespace biped::teleop
