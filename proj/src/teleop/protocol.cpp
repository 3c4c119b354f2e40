#include "biped/teleop/protocol.hpp"

#include <cmath>

#include "biped/errors.hpp"

namespace biped::teleop {

std::string_view to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::Running: return "running";
    case EpisodeStatus::Terminated: return "terminated";
    case EpisodeStatus::Truncated: return "truncated";
  }
  return "running";
}

namespace {

template <typename V>
nlohmann::json array_of(const V& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

double finite(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw InputError(std::string("frame: '") + key + "' must be a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw InputError(std::string("frame: '") + key + "' is not finite");
  return v;
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != N) {
    throw InputError(std::string("frame: '") + key + "' must be an array of " + std::to_string(N));
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    const auto& e = j.at(key)[i];
    if (!e.is_number() || !std::isfinite(e.get<double>())) throw InputError(std::string("frame: bad '") + key + "'");
    v[i] = e.get<double>();
  }
  return v;
}

}  // namespace

nlohmann::json to_json(const StateFrame& f) {
  nlohmann::json rewards = nlohmann::json::object();
  for (int t = 1; t <= kNumRewardTerms; ++t) rewards[reward_term_name(t)] = f.rewards.term(t);
  rewards["total"] = f.rewards.total;
  const auto& q = f.base_orientation;
  return {{"schema", kFrameSchema},
          {"type", "frame"},
          {"seq", f.seq},
          {"time", f.time},
          {"sim_time", f.sim_time},
          {"drift", f.drift},
          {"episode", f.episode},
          {"episode_step", f.episode_step},
          {"status", to_string(f.status)},
          {"base_position", array_of(f.base_position)},
          {"base_quaternion", {q.w(), q.x(), q.y(), q.z()}},
          {"q", array_of(f.q)},
          {"fz", {f.fz[0], f.fz[1]}},
          {"gait_segment", to_string(f.segment)},
          {"gait_phi", f.phi},
          {"command", array_of(f.command)},
          {"rewards", rewards}};
}

StateFrame frame_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("schema", std::string()) != kFrameSchema) throw InputError("frame: wrong schema");
  StateFrame f;
  try {
    f.seq = j.at("seq").get<std::uint64_t>();
    f.episode = j.at("episode").get<std::uint64_t>();
    f.episode_step = j.at("episode_step").get<int>();
    const std::string status = j.at("status").get<std::string>();
    if (status == "running") f.status = EpisodeStatus::Running;
    else if (status == "terminated") f.status = EpisodeStatus::Terminated;
    else if (status == "truncated") f.status = EpisodeStatus::Truncated;
    else throw InputError("frame: unknown status '" + status + "'");
    const std::string seg = j.at("gait_segment").get<std::string>();
    bool found = false;
    for (GaitSegment s : {GaitSegment::DoubleSupportA, GaitSegment::FlightRight, GaitSegment::DoubleSupportB,
                          GaitSegment::FlightLeft}) {
      if (to_string(s) == seg) {
        f.segment = s;
        found = true;
      }
    }
    if (!found) throw InputError("frame: unknown gait segment '" + seg + "'");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("frame: ") + e.what());
  }
  f.time = finite(j, "time");
  f.sim_time = finite(j, "sim_time");
  f.drift = finite(j, "drift");
  f.base_position = vec<3>(j, "base_position");
  const Eigen::Vector4d q = vec<4>(j, "base_quaternion");
  f.base_orientation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  f.q = vec<kNumJoints>(j, "q");
  const Eigen::Vector2d fz = vec<2>(j, "fz");
  f.fz = {fz[0], fz[1]};
  f.phi = finite(j, "gait_phi");
  f.command = vec<3>(j, "command");
  if (!j.contains("rewards") || !j.at("rewards").is_object()) throw InputError("frame: 'rewards' must be an object");
  const auto& r = j.at("rewards");
  for (int t = 1; t <= kNumRewardTerms; ++t) f.rewards.term(t) = finite(r, reward_term_name(t).c_str());
  f.rewards.total = finite(r, "total");
  return f;
}

ClientMessage parse_client_message(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    throw InputError("message is not valid JSON");
  }
  if (!j.is_object()) throw InputError("message must be a JSON object");
  if (j.value("schema", std::string()) != kCommandSchema) {
    throw InputError(std::string("message schema must be '") + kCommandSchema + "'");
  }
  if (!j.contains("type") || !j.at("type").is_string()) throw InputError("message needs a string 'type'");
  const std::string type = j.at("type").get<std::string>();
  ClientMessage m;
  if (j.contains("t")) {
    if (!j.at("t").is_number() || !std::isfinite(j.at("t").get<double>())) throw InputError("'t' must be a finite number");
    m.client_time = j.at("t").get<double>();
  }
  if (type == "reset") {
    m.kind = MessageKind::Reset;
    return m;
  }
  if (type != "command") throw InputError("unknown message type '" + type + "'");
  m.kind = MessageKind::Command;
  const char* keys[3] = {"vx", "vy", "wz"};
  for (int i = 0; i < 3; ++i) {
    if (!j.contains(keys[i]) || !j.at(keys[i]).is_number()) {
      throw InputError(std::string("command needs a number '") + keys[i] + "'");
    }
    m.command[i] = j.at(keys[i]).get<double>();
    if (!std::isfinite(m.command[i])) throw InputError(std::string("'") + keys[i] + "' is not finite");
  }
  return m;
}

nlohmann::json error_message(const std::string& reason) {
  return {{"schema", kFrameSchema}, {"type", "error"}, {"message", reason}};
}

bool CommandMailbox::post(const Vec3& command, std::optional<double> client_time) {
  std::lock_guard lock(mutex_);
  if (client_time) {
    if (newest_ && *client_time < *newest_) return false;
    newest_ = client_time;
  }
  pending_ = command;
  return true;
}

std::optional<Vec3> CommandMailbox::take() {
  std::lock_guard lock(mutex_);
  return std::exchange(pending_, std::nullopt);
}

}  // namespace biped::teleop
