#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biped/rewards.hpp"

namespace biped {

inline constexpr char kTrajectoryVersion[] = "biped-trajectory/1";

/// One logged control step: the reward inputs, what the rewards came to, and the pose.
struct TrajectoryRow {
  double time = 0.0;
  StepContext context;
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
  RewardBreakdown breakdown;
  bool terminated = false;
  bool truncated = false;
};

/// CSV log: a version line, a line holding the env config JSON, the column header, then one
/// row per step. Numbers are written with 17 significant digits so they read back exactly.
class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::filesystem::path& path, const nlohmann::json& env_config);
  void write(const TrajectoryRow& row);

 private:
  std::ofstream out_;
};

struct Trajectory {
  nlohmann::json env_config;
  std::vector<TrajectoryRow> rows;
};

std::vector<std::string> trajectory_columns();

/// FormatError on a version mismatch or a malformed / truncated line (message names the line).
Trajectory read_trajectory(const std::filesystem::path& path);

struct ReplayResult {
  std::vector<RewardBreakdown> recomputed;
  double max_abs_diff = 0.0;  // over all terms and totals
};

/// Re-evaluates every row's rewards with the weights and limits from the log's env config.
ReplayResult replay(const Trajectory& log);

/// time, r1..r17, total per row.
void write_reward_table(const std::filesystem::path& path, const Trajectory& log,
                        const std::vector<RewardBreakdown>& rows);
void write_reward_table(std::ostream& out, const Trajectory& log, const std::vector<RewardBreakdown>& rows);

}  // namespace biped
