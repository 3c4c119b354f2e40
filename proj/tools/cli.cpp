#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "biped/batch_env.hpp"
#include "biped/config.hpp"
#include "biped/errors.hpp"
#include "biped/ppo.hpp"
#include "biped/runtime.hpp"
#include "biped/teleop/server.hpp"
#include "biped/thread_pool.hpp"
#include "biped/trajectory.hpp"
#include "biped/version.hpp"

namespace biped::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
std::optional<T> given(const CLI::Option* opt, const T& value) {
  return opt->count() > 0 ? std::optional<T>(value) : std::nullopt;
}

template <typename T>
T parse_env(const std::string& name, const char* text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError(name + ": cannot parse '" + std::string(text) + "'");
  }
  return v;
}

template <>
std::string parse_env<std::string>(const std::string&, const char* text) {
  return text;
}

/// Resolves settings as flag > BIPED_<KEY> environment variable > config file > default and
/// remembers where each value came from.
class Settings {
 public:
  explicit Settings(const json* file = nullptr) : file_(file) {}

  template <typename T>
  T resolve(const std::string& key, const std::optional<T>& flag, const T& fallback) {
    if (flag) return record(key, *flag, "flag --" + dashed(key));
    const std::string var = env_name(key);
    if (const char* v = std::getenv(var.c_str()); v && *v) return record(key, parse_env<T>(var, v), "env " + var);
    if (file_ && file_->contains(key)) {
      try {
        return record(key, file_->at(key).get<T>(), "config");
      } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    }
    return record(key, fallback, "default");
  }

  void record_raw(const std::string& key, const std::string& value, const std::string& source) {
    lines_.push_back({key, value, source});
  }

  void print(std::ostream& err) const {
    for (const auto& l : lines_) err << "  " << std::left << std::setw(18) << l.key << l.value << "  [" << l.source << "]\n";
  }

  static std::string env_name(const std::string& key) {
    std::string s = "BIPED_";
    for (char c : key) s += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  }

 private:
  struct Line {
    std::string key, value, source;
  };

  static std::string dashed(std::string key) {
    for (char& c : key) c = c == '_' ? '-' : c;
    return key;
  }

  template <typename T>
  T record(const std::string& key, const T& value, const std::string& source) {
    std::ostringstream s;
    s << value;
    lines_.push_back({key, s.str(), source});
    return value;
  }

  const json* file_;
  std::vector<Line> lines_;
};

Vec3 parse_command(const std::string& text) {
  Vec3 v;
  std::istringstream in(text);
  std::string part;
  int i = 0;
  while (std::getline(in, part, ',')) {
    if (i >= 3) throw UsageError("command '" + text + "' must be vx,vy,wz");
    try {
      std::size_t used = 0;
      v[i] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError("command '" + text + "' must be vx,vy,wz");
    }
    ++i;
  }
  if (i != 3) throw UsageError("command '" + text + "' must be vx,vy,wz");
  return v;
}

std::vector<Vec3> default_grid() {
  return {{0.0, 0.0, 0.0},  {0.5, 0.0, 0.0},  {1.0, 0.0, 0.0},  {-0.3, 0.0, 0.0}, {0.0, 0.3, 0.0},
          {0.0, -0.3, 0.0}, {0.0, 0.0, 0.5},  {0.0, 0.0, -0.5}, {0.5, 0.0, 0.5}};
}

EnvConfig env_for_policy(const PolicySnapshot& policy, const std::string& env_path) {
  if (!env_path.empty()) return load_env_config(env_path);
  if (policy.env_config.is_null() || policy.env_config.empty()) return EnvConfig{};
  return env_config_from_json(policy.env_config);
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(8) << std::setfill('0') << v;
  return s.str();
}

// ---- train ----------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string env;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::int64_t total_steps = 0;
  int num_envs = 0;
  int threads = 0;
  int checkpoint_every = 0;
  std::string resume;
  bool force = false;
  bool dry_run = false;
  CLI::Option *o_env, *o_out, *o_seed, *o_steps, *o_envs, *o_threads, *o_ckpt;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* sub = app.add_subcommand("train", "Train a policy with PPO; writes metrics.csv and checkpoints");
  sub->add_option("--config", a.config, "Train config (JSON, schema biped-train/1)")->check(CLI::ExistingFile);
  a.o_env = sub->add_option("--env", a.env, "Env config file; overrides the config's \"env\" [BIPED_ENV]");
  a.o_out = sub->add_option("--out,--output-dir", a.output_dir, "Output directory [BIPED_OUTPUT_DIR] (default runs/train)");
  a.o_seed = sub->add_option("--seed", a.seed, "Master seed [BIPED_SEED]");
  a.o_steps = sub->add_option("--total-steps", a.total_steps, "Env steps to train for [BIPED_TOTAL_STEPS]");
  a.o_envs = sub->add_option("--num-envs", a.num_envs, "Parallel environments [BIPED_NUM_ENVS]");
  a.o_threads = sub->add_option("--threads", a.threads, "Worker threads, 0 = all cores [BIPED_THREADS]");
  a.o_ckpt = sub->add_option("--checkpoint-every", a.checkpoint_every,
                             "Checkpoint period in updates, 0 = final only [BIPED_CHECKPOINT_EVERY]");
  sub->add_option("--resume", a.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  sub->add_flag("--force", a.force, "Resume even if the checkpoint's config hash differs");
  sub->add_flag("--dry-run", a.dry_run, "Validate configs, print the resolved config and exit");
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  json file = a.config.empty() ? json{{"schema", kTrainSchema}} : load_json_file(a.config);
  if (!file.is_object()) throw ConfigError("train config must be a JSON object");
  const fs::path base = a.config.empty() ? fs::path() : fs::path(a.config).parent_path();

  Settings s(&file);
  const PpoConfig defaults;
  file["seed"] = s.resolve("seed", given(a.o_seed, a.seed), defaults.seed);
  file["total_steps"] = s.resolve("total_steps", given(a.o_steps, a.total_steps), defaults.total_steps);
  file["num_envs"] = s.resolve("num_envs", given(a.o_envs, a.num_envs), defaults.num_envs);
  file["threads"] = s.resolve("threads", given(a.o_threads, a.threads), defaults.threads);
  file["checkpoint_every"] =
      s.resolve("checkpoint_every", given(a.o_ckpt, a.checkpoint_every), defaults.checkpoint_every);
  const fs::path out_dir = s.resolve<std::string>("output_dir", given(a.o_out, a.output_dir), "runs/train");

  EnvConfig env;
  const char* env_var = std::getenv("BIPED_ENV");
  if (a.o_env->count() > 0) {
    env = load_env_config(a.env);
    s.record_raw("env", a.env, "flag --env");
  } else if (env_var && *env_var) {
    env = load_env_config(env_var);
    s.record_raw("env", env_var, "env BIPED_ENV");
  } else if (file.contains("env") && file.at("env").is_string()) {
    const fs::path p = base / file.at("env").get<std::string>();
    env = load_env_config(p);
    s.record_raw("env", p.string(), "config");
  } else if (file.contains("env")) {
    env = env_config_from_json(file.at("env"), base);
    s.record_raw("env", "(inline)", "config");
  } else {
    s.record_raw("env", "(built-in)", "default");
  }
  file.erase("env");
  file.erase("output_dir");
  const PpoConfig cfg = ppo_config_from_json(file);

  err << "train: resolved settings\n";
  s.print(err);
  err << "  updates           " << cfg.num_updates() << " x " << cfg.steps_per_update() << " env steps\n";

  const json resolved = {{"train", to_json(cfg)}, {"env", to_json(env)}, {"output_dir", out_dir.string()}};
  if (a.dry_run) {
    out << resolved.dump(2) << '\n';
    err << "dry run: configuration is valid\n";
    return kExitOk;
  }

  fs::create_directories(out_dir);
  std::ofstream(out_dir / "config.json") << resolved.dump(2) << '\n';

  auto pool = std::make_shared<ThreadPool>(static_cast<std::size_t>(cfg.threads));
  PpoTrainer trainer(cfg, std::make_unique<LocomotionBatch>(env, cfg.num_envs, pool), to_json(env));
  if (!a.resume.empty()) {
    trainer.load_checkpoint(a.resume, a.force);
    err << "resumed from " << a.resume << " at update " << trainer.updates_done() << '\n';
  }
  const int total = cfg.num_updates();
  const int every = std::max(1, total / 50);
  const auto t0 = std::chrono::steady_clock::now();
  trainer.train(out_dir, [&](const UpdateStats& u) {
    if (u.update % every != 0 && u.update != total) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    err << "update " << u.update << '/' << total << "  steps " << u.env_steps << "  episodes " << u.episodes
        << "  mean_len " << u.mean_episode_length << "  mean_return " << u.mean_return << "  " << std::fixed
        << std::setprecision(0) << secs << " s" << std::defaultfloat << std::setprecision(6) << '\n';
  });
  out << "metrics: " << (out_dir / "metrics.csv").string() << '\n';
  out << "checkpoint: " << (out_dir / "final.bin").string() << '\n';
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string env;
  std::vector<std::string> commands;
  int episodes = 1;
  std::uint64_t seed = 0;
  int max_steps = 0;
  std::string out;
  std::string trajectories;
  bool dry_run = false;
  CLI::Option* o_seed;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint over a command grid (policy mean, command pinned)");
  sub->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sub->add_option("--env", a.env, "Env config; default is the one stored in the checkpoint")
      ->check(CLI::ExistingFile);
  sub->add_option("--command", a.commands, "Grid cell vx,vy,wz; repeatable (default: a 9-cell grid)");
  sub->add_option("--episodes", a.episodes, "Episodes per cell")->check(CLI::PositiveNumber);
  a.o_seed = sub->add_option("--seed", a.seed, "Reset seed [BIPED_SEED]");
  sub->add_option("--max-steps", a.max_steps, "Override the episode step cap")->check(CLI::PositiveNumber);
  sub->add_option("--out", a.out, "Write the per-cell report CSV here");
  sub->add_option("--trajectories", a.trajectories, "Write one trajectory log per episode into this directory");
  sub->add_flag("--dry-run", a.dry_run, "Load checkpoint and configs, then exit");
}

int run_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<Vec3> grid;
  for (const auto& c : a.commands) grid.push_back(parse_command(c));
  if (grid.empty()) grid = default_grid();

  Settings s;
  EvalOptions opts;
  opts.seed = s.resolve("seed", given(a.o_seed, a.seed), std::uint64_t{0});
  opts.episodes_per_cell = a.episodes;
  opts.trajectory_dir = a.trajectories;
  const PolicySnapshot policy = load_policy(a.checkpoint);
  EnvConfig env = env_for_policy(policy, a.env);
  if (a.max_steps > 0) env.max_episode_steps = a.max_steps;
  env.validate();
  s.record_raw("checkpoint", hex(policy.checkpoint_id), a.checkpoint);
  err << "eval: resolved settings\n";
  s.print(err);
  if (a.dry_run) {
    err << "dry run: checkpoint and configs are valid\n";
    return kExitOk;
  }
  if (!opts.trajectory_dir.empty()) fs::create_directories(opts.trajectory_dir);

  const EvalReport report = evaluate(policy, env, grid, opts);
  out << "vx,vy,wz,episodes,mean_len,fall_rate,lin_vel_error,yaw_rate_error,gait_adherence,mean_total\n";
  for (const EvalCell& c : report.cells) {
    out << c.command[0] << ',' << c.command[1] << ',' << c.command[2] << ',' << c.episodes << ','
        << c.mean_episode_length << ',' << c.fall_rate << ',' << c.lin_vel_error << ',' << c.yaw_rate_error << ','
        << c.gait_adherence << ',' << c.mean_total << '\n';
  }
  if (!a.out.empty()) write_report_csv(a.out, report);
  return kExitOk;
}

// ---- serve ----------------------------------------------------------------------------

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

struct ServeArgs {
  std::string checkpoint;
  std::string env;
  std::string address = "127.0.0.1";
  int port = 8765;
  double rate_hz = 50.0;
  int decimation = 1;
  std::uint64_t seed = 0;
  double duration = 0.0;
  bool dry_run = false;
  CLI::Option *o_port, *o_rate, *o_seed, *o_addr;
};

void add_serve(CLI::App& app, ServeArgs& a) {
  auto* sub = app.add_subcommand("serve", "Run a policy at wall-clock rate and stream it over WebSocket");
  sub->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sub->add_option("--env", a.env, "Env config; default is the one stored in the checkpoint")
      ->check(CLI::ExistingFile);
  a.o_addr = sub->add_option("--address", a.address, "Listen address [BIPED_ADDRESS] (default 127.0.0.1)");
  a.o_port = sub->add_option("--port", a.port, "Listen port, 0 = any free port [BIPED_PORT] (default 8765)")
                 ->check(CLI::Range(0, 65535));
  a.o_rate = sub->add_option("--rate-hz", a.rate_hz, "Control steps per second [BIPED_RATE_HZ] (default 50)")
                 ->check(CLI::PositiveNumber);
  sub->add_option("--decimation", a.decimation, "Broadcast every n-th step")->check(CLI::PositiveNumber);
  a.o_seed = sub->add_option("--seed", a.seed, "Reset seed [BIPED_SEED]");
  sub->add_option("--duration", a.duration, "Stop after this many seconds, 0 = until SIGINT/SIGTERM");
  sub->add_flag("--dry-run", a.dry_run, "Load checkpoint and configs, then exit");
}

int run_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  Settings s;
  teleop::ServerOptions opts;
  opts.address = s.resolve<std::string>("address", given(a.o_addr, a.address), opts.address);
  const int port = s.resolve("port", given(a.o_port, a.port), static_cast<int>(opts.port));
  if (port < 0 || port > 65535) throw ConfigError("port must be in [0, 65535]");
  opts.port = static_cast<unsigned short>(port);
  opts.rate_hz = s.resolve("rate_hz", given(a.o_rate, a.rate_hz), opts.rate_hz);
  opts.seed = s.resolve("seed", given(a.o_seed, a.seed), opts.seed);
  opts.decimation = a.decimation;
  if (!(opts.rate_hz > 0.0)) throw ConfigError("rate_hz must be positive");

  PolicySnapshot policy = load_policy(a.checkpoint);
  EnvConfig env = env_for_policy(policy, a.env);
  env.validate();
  s.record_raw("checkpoint", hex(policy.checkpoint_id), a.checkpoint);
  err << "serve: resolved settings\n";
  s.print(err);
  if (a.dry_run) {
    err << "dry run: checkpoint and configs are valid\n";
    return kExitOk;
  }

  teleop::TeleopServer server(std::move(policy), std::move(env), opts);
  server.start();
  out << "listening on http://" << opts.address << ':' << server.port() << "  (GET /health, WebSocket /session)"
      << std::endl;
  g_stop = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (a.duration > 0.0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= a.duration)
      break;
  }
  server.stop();
  const auto st = server.status();
  out << "stopped after " << st.steps << " steps, " << st.episode + 1 << " episodes" << std::endl;
  return kExitOk;
}

// ---- replay / inspect-rewards ---------------------------------------------------------

struct ReplayArgs {
  std::string log;
  double tolerance = 1e-9;
};

int run_replay(const ReplayArgs& a, std::ostream& out, std::ostream& err) {
  const Trajectory log = read_trajectory(a.log);
  const ReplayResult r = replay(log);
  out << "steps " << log.rows.size() << "  max_abs_diff " << std::setprecision(3) << r.max_abs_diff
      << std::setprecision(6) << '\n';
  if (!(r.max_abs_diff <= a.tolerance)) {
    err << "replay: recomputed rewards differ from the log by " << r.max_abs_diff << " (tolerance " << a.tolerance
        << ")\n";
    return kExitFailure;
  }
  return kExitOk;
}

struct InspectArgs {
  std::string log;
  std::string out = "-";
};

int run_inspect(const InspectArgs& a, std::ostream& out, std::ostream&) {
  const Trajectory log = read_trajectory(a.log);
  const ReplayResult r = replay(log);
  if (a.out == "-") {
    write_reward_table(out, log, r.recomputed);
  } else {
    write_reward_table(fs::path(a.out), log, r.recomputed);
  }
  return kExitOk;
}

// ---- bench ----------------------------------------------------------------------------

struct BenchArgs {
  int envs = 1024;
  int steps = 1000;
  int threads = 0;
  std::uint64_t seed = 0;
  std::string env;
  bool as_json = false;
  CLI::Option *o_threads, *o_seed;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  auto* sub = app.add_subcommand("bench", "Measure batched env throughput (env-steps/s) under random actions");
  sub->add_option("--envs", a.envs, "Parallel environments (default 1024)")->check(CLI::PositiveNumber);
  sub->add_option("--steps", a.steps, "Timed control steps per env (default 1000)")->check(CLI::PositiveNumber);
  a.o_threads = sub->add_option("--threads", a.threads, "Worker threads, 0 = all cores [BIPED_THREADS]");
  a.o_seed = sub->add_option("--seed", a.seed, "Seed for resets and actions [BIPED_SEED]");
  sub->add_option("--env", a.env, "Env config file")->check(CLI::ExistingFile);
  sub->add_flag("--json", a.as_json, "Print the report as JSON");
}

int run_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  Settings s;
  const int threads = s.resolve("threads", given(a.o_threads, a.threads), 0);
  const std::uint64_t seed = s.resolve("seed", given(a.o_seed, a.seed), std::uint64_t{0});
  if (threads < 0) throw ConfigError("threads must be >= 0");
  const EnvConfig env = a.env.empty() ? EnvConfig{} : load_env_config(a.env);
  err << "bench: resolved settings\n";
  s.print(err);

  auto pool = std::make_shared<ThreadPool>(static_cast<std::size_t>(threads));
  LocomotionBatch batch(env, a.envs, pool);
  batch.reset(seed);
  Rng rng = make_rng(seed, 1);
  Eigen::MatrixXd actions(kActDim, a.envs);
  BatchStep result;
  auto step = [&] {
    for (Eigen::Index k = 0; k < actions.size(); ++k) actions.data()[k] = 0.5 * standard_normal(rng);
    batch.step(actions, result);
  };
  for (int i = 0; i < 5; ++i) step();  // warm caches and allocations
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < a.steps; ++i) step();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rate = static_cast<double>(a.envs) * a.steps / secs;
  const json report = {{"envs", a.envs},
                       {"steps", a.steps},
                       {"threads", pool->size()},
                       {"hardware_threads", std::thread::hardware_concurrency()},
                       {"seconds", secs},
                       {"env_steps_per_second", rate},
                       {"physics_steps_per_second", rate * env.substeps}};
  if (a.as_json) {
    out << report.dump() << '\n';
  } else {
    out << a.envs << " envs x " << a.steps << " steps on " << pool->size() << " threads: " << secs << " s, "
        << static_cast<long long>(rate) << " env-steps/s\n";
  }
  return kExitOk;
}

json version_json() {
  return {{"name", "biped"},
          {"version", kVersion},
          {"schemas",
           {{"env", kEnvSchema},
            {"train", kTrainSchema},
            {"trajectory", kTrajectoryVersion},
            {"teleop_frame", teleop::kFrameSchema},
            {"teleop_command", teleop::kCommandSchema},
            {"checkpoint", kCheckpointVersion}}}};
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Velocity-commanded biped locomotion: training, evaluation, serving and log tools", "biped");
  app.require_subcommand(0, 1);
  bool version = false, version_as_json = false;
  app.add_flag("--version", version, "Print the version and exit");
  app.add_flag("--json", version_as_json, "With --version: machine-readable output");

  TrainArgs train;
  add_train(app, train);
  EvalArgs eval;
  add_eval(app, eval);
  ServeArgs serve;
  add_serve(app, serve);
  ReplayArgs rep;
  auto* replay_cmd = app.add_subcommand("replay", "Recompute a trajectory log's rewards and compare with the logged ones");
  replay_cmd->add_option("--log", rep.log, "Trajectory log (CSV)")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--tolerance", rep.tolerance, "Largest accepted absolute difference (default 1e-9)");
  InspectArgs ins;
  auto* inspect_cmd = app.add_subcommand("inspect-rewards", "Per-step reward table for a trajectory log: time, r1..r17, total");
  inspect_cmd->add_option("--log", ins.log, "Trajectory log (CSV)")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--out", ins.out, "Output CSV, - for stdout (default)");
  BenchArgs bench;
  add_bench(app, bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::ostringstream o, er;
      app.exit(e, o, er);
      out << o.str() << er.str();
      return kExitOk;
    }
    err << "biped: " << e.what() << " (see --help)\n";
    return kExitUsage;
  }

  try {
    if (version) {
      if (version_as_json) {
        out << version_json().dump() << '\n';
      } else {
        out << "biped " << kVersion << '\n';
      }
      return kExitOk;
    }
    if (version_as_json) throw UsageError("--json is only valid with --version");
    if (app.got_subcommand("train")) return run_train(train, out, err);
    if (app.got_subcommand("eval")) return run_eval(eval, out, err);
    if (app.got_subcommand("serve")) return run_serve(serve, out, err);
    if (app.got_subcommand(replay_cmd)) return run_replay(rep, out, err);
    if (app.got_subcommand(inspect_cmd)) return run_inspect(ins, out, err);
    if (app.got_subcommand("bench")) return run_bench(bench, out, err);
    throw UsageError("a subcommand is required");
  } catch (const UsageError& e) {
    err << "biped: " << e.what() << " (see --help)\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "biped: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "biped: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace biped::cli
