#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "biped/env.hpp"

namespace biped::teleop {

inline constexpr char kFrameSchema[] = "biped-teleop-frame/1";
inline constexpr char kCommandSchema[] = "biped-teleop-command/1";

enum class EpisodeStatus { Running, Terminated, Truncated };

std::string_view to_string(EpisodeStatus s);

/// Server -> client snapshot after a control step.
struct StateFrame {
  std::uint64_t seq = 0;
  double time = 0.0;          // episode time, s
  double sim_time = 0.0;      // since server start, s
  double drift = 0.0;         // sim_time - wall time since start, s
  std::uint64_t episode = 0;
  int episode_step = 0;
  EpisodeStatus status = EpisodeStatus::Running;
  Vec3 base_position = Vec3::Zero();
  Eigen::Quaterniond base_orientation = Eigen::Quaterniond::Identity();
  JointVector q = JointVector::Zero();
  std::array<double, 2> fz{};
  GaitSegment segment = GaitSegment::DoubleSupportA;
  double phi = 0.0;
  Vec3 command = Vec3::Zero();
  RewardBreakdown rewards;
};

nlohmann::json to_json(const StateFrame& f);
/// InputError when a field is missing, mistyped or non-finite.
StateFrame frame_from_json(const nlohmann::json& j);

enum class MessageKind { Command, Reset };

/// Client -> server.
struct ClientMessage {
  MessageKind kind = MessageKind::Command;
  Vec3 command = Vec3::Zero();
  std::optional<double> client_time;  // absent: never treated as stale
};

/// InputError with a one-line reason on anything malformed.
ClientMessage parse_client_message(std::string_view text);

nlohmann::json error_message(const std::string& reason);

/// Latest-wins slot between network intake and the simulation loop.
class CommandMailbox {
 public:
  /// false when the message is older than the newest one accepted so far.
  bool post(const Vec3& command, std::optional<double> client_time);
  std::optional<Vec3> take();

 private:
  std::mutex mutex_;
  std::optional<Vec3> pending_;
  std::optional<double> newest_;
};

}  // namespace biped::teleop
