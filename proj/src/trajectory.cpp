#include "biped/trajectory.hpp"

#include <cstdio>
#include <sstream>

#include "biped/env.hpp"
#include "biped/errors.hpp"

namespace biped {

namespace {

void add_joint_columns(std::vector<std::string>& cols, const std::string& prefix) {
  for (int j = 0; j < kNumJoints; ++j) cols.push_back(prefix + std::to_string(j));
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Flattens a row in trajectory_columns() order.
std::vector<double> flatten(const TrajectoryRow& r) {
  const StepContext& c = r.context;
  std::vector<double> v = {r.time, c.command.x(), c.command.y(), c.command.z(), c.base_vx, c.base_vy,
                           c.base_vz, c.yaw_rate, c.roll, c.pitch, c.roll_rate, c.pitch_rate};
  for (const JointVector* jv : {&c.torque, &c.action, &c.last_action, &c.q, &c.q_default, &c.qd, &c.qd_prev,
                                &c.qd_prev2}) {
    v.insert(v.end(), jv->data(), jv->data() + kNumJoints);
  }
  v.insert(v.end(), {c.fz[0], c.fz[1], c.foot_speed_sq[0], c.foot_speed_sq[1], static_cast<double>(c.stance[0]),
                     static_cast<double>(c.stance[1]), c.phase_changed ? 1.0 : 0.0, c.base_x, c.base_y, c.base_z,
                     c.head_x, c.head_y, r.orientation.w(), r.orientation.x(), r.orientation.y(),
                     r.orientation.z()});
  v.insert(v.end(), r.breakdown.r.begin(), r.breakdown.r.end());
  v.insert(v.end(), {r.breakdown.total, r.terminated ? 1.0 : 0.0, r.truncated ? 1.0 : 0.0});
  return v;
}

TrajectoryRow unflatten(const std::vector<double>& v) {
  TrajectoryRow r;
  StepContext& c = r.context;
  std::size_t k = 0;
  auto next = [&] { return v[k++]; };
  r.time = next();
  c.command.x() = next();
  c.command.y() = next();
  c.command.z() = next();
  c.base_vx = next();
  c.base_vy = next();
  c.base_vz = next();
  c.yaw_rate = next();
  c.roll = next();
  c.pitch = next();
  c.roll_rate = next();
  c.pitch_rate = next();
  for (JointVector* jv : {&c.torque, &c.action, &c.last_action, &c.q, &c.q_default, &c.qd, &c.qd_prev, &c.qd_prev2}) {
    for (int j = 0; j < kNumJoints; ++j) (*jv)[j] = next();
  }
  c.fz[0] = next();
  c.fz[1] = next();
  c.foot_speed_sq[0] = next();
  c.foot_speed_sq[1] = next();
  c.stance[0] = static_cast<int>(next());
  c.stance[1] = static_cast<int>(next());
  c.phase_changed = next() != 0.0;
  c.base_x = next();
  c.base_y = next();
  c.base_z = next();
  c.head_x = next();
  c.head_y = next();
  const double w = next(), x = next(), y = next(), z = next();
  r.orientation = Eigen::Quaterniond(w, x, y, z);
  for (double& t : r.breakdown.r) t = next();
  r.breakdown.total = next();
  r.terminated = next() != 0.0;
  r.truncated = next() != 0.0;
  return r;
}

}  // namespace

std::vector<std::string> trajectory_columns() {
  std::vector<std::string> cols = {"time",     "cmd_vx",    "cmd_vy", "cmd_wz",    "base_vx",   "base_vy",
                                   "base_vz",  "yaw_rate",  "roll",   "pitch",     "roll_rate", "pitch_rate"};
  for (const char* p : {"tau", "action", "last_action", "q", "q_default", "qd", "qd_prev", "qd_prev2"}) {
    add_joint_columns(cols, std::string(p) + "_");
  }
  for (const char* s : {"fz_left", "fz_right", "foot_speed_sq_left", "foot_speed_sq_right", "stance_left",
                        "stance_right", "phase_changed", "base_x", "base_y", "base_z", "head_x", "head_y", "base_qw",
                        "base_qx", "base_qy", "base_qz"}) {
    cols.emplace_back(s);
  }
  for (int t = 1; t <= kNumRewardTerms; ++t) cols.push_back(reward_term_name(t));
  for (const char* s : {"total", "terminated", "truncated"}) cols.emplace_back(s);
  return cols;
}

TrajectoryWriter::TrajectoryWriter(const std::filesystem::path& path, const nlohmann::json& env_config)
    : out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot write trajectory " + path.string());
  out_ << "# " << kTrajectoryVersion << '\n' << "# " << env_config.dump() << '\n';
  const auto cols = trajectory_columns();
  for (std::size_t k = 0; k < cols.size(); ++k) out_ << (k ? "," : "") << cols[k];
  out_ << '\n';
}

void TrajectoryWriter::write(const TrajectoryRow& row) {
  const auto v = flatten(row);
  std::string line;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) line += ',';
    line += num(v[k]);
  }
  out_ << line << '\n';
  if (!out_) throw std::runtime_error("trajectory write failed");
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open trajectory " + path.string());
  const std::string where = path.string() + ":";
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw FormatError(where + "1: missing version line");
  if (line.substr(2) != kTrajectoryVersion) {
    throw FormatError(where + "1: unsupported version '" + line.substr(2) + "', expected " + kTrajectoryVersion);
  }
  Trajectory log;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw FormatError(where + "2: missing config line");
  try {
    log.env_config = nlohmann::json::parse(line.substr(2));
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError(where + "2: config is not valid JSON");
  }
  const auto cols = trajectory_columns();
  if (!std::getline(in, line)) throw FormatError(where + "3: missing header");
  {
    std::stringstream ss(line);
    std::string name;
    std::size_t k = 0;
    while (std::getline(ss, name, ',')) {
      if (k >= cols.size() || name != cols[k]) throw FormatError(where + "3: unexpected column '" + name + "'");
      ++k;
    }
    if (k != cols.size()) throw FormatError(where + "3: header has " + std::to_string(k) + " columns");
  }
  std::size_t lineno = 3;
  std::vector<double> values;
  values.reserve(cols.size());
  while (true) {
    line.clear();
    if (!std::getline(in, line)) break;
    ++lineno;
    const bool complete = !in.eof();  // the writer ends every row with a newline
    values.clear();
    const char* p = line.c_str();
    while (*p) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p || (*end != ',' && *end != '\0')) break;
      values.push_back(v);
      p = *end ? end + 1 : end;
    }
    if (!complete || values.size() != cols.size() || *p) {
      throw FormatError(where + std::to_string(lineno) + ": truncated or malformed row (" +
                        std::to_string(values.size()) + " of " + std::to_string(cols.size()) + " fields)");
    }
    log.rows.push_back(unflatten(values));
  }
  return log;
}

ReplayResult replay(const Trajectory& log) {
  const EnvConfig cfg = env_config_from_json(log.env_config);
  const JointLimits limits{cfg.model->lower_limits(), cfg.model->upper_limits()};
  ReplayResult out;
  out.recomputed.reserve(log.rows.size());
  for (const TrajectoryRow& row : log.rows) {
    const RewardBreakdown b = evaluate_all(row.context, cfg.rewards, limits);
    for (int t = 0; t < kNumRewardTerms; ++t) {
      out.max_abs_diff = std::max(out.max_abs_diff, std::abs(b.r[t] - row.breakdown.r[t]));
    }
    out.max_abs_diff = std::max(out.max_abs_diff, std::abs(b.total - row.breakdown.total));
    out.recomputed.push_back(b);
  }
  return out;
}

void write_reward_table(const std::filesystem::path& path, const Trajectory& log,
                        const std::vector<RewardBreakdown>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_reward_table(out, log, rows);
}

void write_reward_table(std::ostream& out, const Trajectory& log, const std::vector<RewardBreakdown>& rows) {
  out << "time";
  for (int t = 1; t <= kNumRewardTerms; ++t) out << ',' << reward_term_name(t);
  out << ",total\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << num(log.rows[i].time);
    for (double r : rows[i].r) out << ',' << num(r);
    out << ',' << num(rows[i].total) << '\n';
  }
}

}  // namespace biped
