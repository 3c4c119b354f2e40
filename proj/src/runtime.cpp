#include "biped/runtime.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "biped/batch_env.hpp"
#include "biped/errors.hpp"

namespace biped {

double gait_adherence(const std::vector<StepContext>& steps) {
  if (steps.empty()) return 0.0;
  int match = 0;
  for (const StepContext& c : steps) {
    for (int f = 0; f < 2; ++f) {
      const bool loaded = c.fz[f] > kStanceForceThreshold;
      match += loaded == (c.stance[f] > 0);
    }
  }
  return match / (2.0 * static_cast<double>(steps.size()));
}

namespace {

TrajectoryRow make_row(const LocomotionEnv& env, const Transition& tr) {
  TrajectoryRow row;
  row.time = env.episode_time();
  row.context = tr.context;
  row.orientation = env.state().base_orientation;
  row.breakdown = tr.breakdown;
  row.terminated = tr.terminated;
  row.truncated = tr.truncated;
  return row;
}

}  // namespace

int record_episode(const PolicySnapshot& policy, LocomotionEnv& env, std::uint64_t seed,
                   const std::filesystem::path& path) {
  TrajectoryWriter log(path, to_json(env.config()));
  Observation obs = env.reset(seed);
  int steps = 0;
  while (true) {
    const Transition tr = env.step(policy.act(obs).col(0));
    ++steps;
    // a diverged step has no finite state to log
    if (!tr.info.diverged) log.write(make_row(env, tr));
    if (tr.terminated || tr.truncated) return steps;
    obs = tr.observation;
  }
}

EvalReport evaluate(const PolicySnapshot& policy, const EnvConfig& config, const std::vector<Vec3>& grid,
                    const EvalOptions& options) {
  if (options.episodes_per_cell < 1) throw InputError("evaluate: episodes_per_cell must be >= 1");
  if (!options.trajectory_dir.empty()) std::filesystem::create_directories(options.trajectory_dir);
  EvalReport report;
  LocomotionEnv env(config);
  for (std::size_t c = 0; c < grid.size(); ++c) {
    EvalCell cell;
    env.set_command(grid[c]);
    cell.command = env.command();
    double lin = 0.0, yaw = 0.0, total = 0.0;
    long steps = 0, falls = 0;
    std::vector<StepContext> contexts;
    for (int e = 0; e < options.episodes_per_cell; ++e) {
      std::unique_ptr<TrajectoryWriter> log;
      if (!options.trajectory_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof name, "cell%03zu_ep%03d.csv", c, e);
        log = std::make_unique<TrajectoryWriter>(options.trajectory_dir / name, to_json(config));
      }
      Observation obs = env.reset(env_seed(options.seed, e));
      while (true) {
        const Transition tr = env.step(policy.act(obs).col(0));
        ++steps;
        const Vec3& v = tr.info.base_velocity;
        lin += std::hypot(cell.command.x() - v.x(), cell.command.y() - v.y());
        yaw += std::abs(cell.command.z() - tr.info.yaw_rate);
        for (int t = 0; t < kNumRewardTerms; ++t) cell.mean_terms[t] += tr.breakdown.r[t];
        total += tr.breakdown.total;
        if (!tr.info.diverged) {
          contexts.push_back(tr.context);
          if (log) log->write(make_row(env, tr));
        }
        if (tr.terminated || tr.truncated) {
          falls += tr.terminated;
          break;
        }
        obs = tr.observation;
      }
    }
    cell.episodes = options.episodes_per_cell;
    cell.lin_vel_error = lin / steps;
    cell.yaw_rate_error = yaw / steps;
    cell.mean_episode_length = static_cast<double>(steps) / cell.episodes;
    cell.fall_rate = static_cast<double>(falls) / cell.episodes;
    cell.gait_adherence = gait_adherence(contexts);
    for (double& t : cell.mean_terms) t /= steps;
    cell.mean_total = total / steps;
    report.cells.push_back(cell);
  }
  return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "cmd_vx,cmd_vy,cmd_wz,episodes,lin_vel_error,yaw_rate_error,mean_episode_length,fall_rate,gait_adherence";
  for (int t = 1; t <= kNumRewardTerms; ++t) out << ',' << reward_term_name(t);
  out << ",total\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const EvalCell& c : report.cells) {
    out << num(c.command.x()) << ',' << num(c.command.y()) << ',' << num(c.command.z()) << ',' << c.episodes << ','
        << num(c.lin_vel_error) << ',' << num(c.yaw_rate_error) << ',' << num(c.mean_episode_length) << ','
        << num(c.fall_rate) << ',' << num(c.gait_adherence);
    for (double t : c.mean_terms) out << ',' << num(t);
    out << ',' << num(c.mean_total) << '\n';
  }
}

}  // namespace biped
