#include <doctest.h>

#include <cmath>
#include <cstring>

#include "biped/batch_env.hpp"
#include "biped/env.hpp"
#include "biped/errors.hpp"

using namespace biped;

namespace {

EnvConfig test_config(std::uint64_t seed = 7) {
  EnvConfig c;
  c.seed = seed;
  return c;
}

bool bit_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("observation layout and scaling") {
  ObservationInputs in;
  in.yaw_rate = 1.0;
  in.command = Vec3(1.0, 0.3, 0.5);
  const Observation o = build_observation(in);
  CHECK(o.size() == 45);
  CHECK(o[0] == 0.25);
  CHECK(o[4] == 2.0);
  CHECK(o[5] == 0.6);
  CHECK(o[6] == 0.125);

  ObservationInputs zero;
  zero.projected_gravity = Vec3(0.0, 0.0, -1.0);
  const Observation z = build_observation(zero);
  for (int i = 0; i < kObsDim; ++i) {
    const bool allowed = i == 3 || i == obs_slot::kClock + 1;
    CHECK_MESSAGE((z[i] != 0.0) == allowed, "slot " << i);
  }

  ObservationInputs slots;
  for (int j = 0; j < kNumJoints; ++j) {
    slots.joint_pos[j] = 10 + j;
    slots.joint_vel[j] = 100 + j;
    slots.last_action[j] = 1000 + j;
  }
  slots.clock = {0.5, -0.25};
  const Observation s = build_observation(slots);
  CHECK(s[7] == 10);
  CHECK(s[18] == 21);
  CHECK(s[19] == 100);
  CHECK(s[30] == 111);
  CHECK(s[31] == 1000);
  CHECK(s[42] == 1011);
  CHECK(s[43] == 0.5);
  CHECK(s[44] == -0.25);
}

TEST_CASE("command sampling") {
  CommandRanges r;
  Rng rng = make_rng(3);

  SUBCASE("p_zero = 1") {
    r.p_zero = 1.0;
    for (int i = 0; i < 100; ++i) CHECK(sample_command(rng, r) == Vec3::Zero());
  }

  SUBCASE("statistics over 1e5 draws") {
    const int n = 100000;
    Vec3 sum = Vec3::Zero(), lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9);
    for (int i = 0; i < n; ++i) {
      const Vec3 c = sample_command(rng, r);
      sum += c;
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
    const AxisRange axes[3] = {r.vx, r.vy, r.wz};
    for (int a = 0; a < 3; ++a) {
      CHECK(lo[a] >= axes[a].lo);
      CHECK(hi[a] <= axes[a].hi);
      // mixture of a point mass at 0 (p_zero) and a uniform on [lo, hi]
      const double q = 1.0 - r.p_zero;
      const double mean = q * 0.5 * (axes[a].lo + axes[a].hi);
      const double second =
          q * (axes[a].lo * axes[a].lo + axes[a].lo * axes[a].hi + axes[a].hi * axes[a].hi) / 3.0;
      const double sigma = std::sqrt((second - mean * mean) / n);
      CHECK(std::abs(sum[a] / n - mean) < 3.0 * sigma);
    }
  }

  SUBCASE("reproducible") {
    Rng a = make_rng(11), b = make_rng(11);
    for (int i = 0; i < 50; ++i) CHECK(sample_command(a, r) == sample_command(b, r));
  }

  SUBCASE("clamp") {
    CHECK(clamp_command(Vec3(5.0, -5.0, 9.0), r) == Vec3(1.0, -0.3, 0.5));
    CHECK(clamp_command(Vec3(NAN, 0.1, INFINITY), r) == Vec3(0.0, 0.1, 0.0));
  }

  SUBCASE("clamp is idempotent and lands in range") {
    const AxisRange axes[3] = {r.vx, r.vy, r.wz};
    for (int i = 0; i < 10000; ++i) {
      Vec3 c;
      for (int a = 0; a < 3; ++a) c[a] = 3.0 * standard_normal(rng);
      if (i % 97 == 0) c[i % 3] = i % 2 ? NAN : -INFINITY;
      const Vec3 once = clamp_command(c, r);
      CHECK(clamp_command(once, r) == once);
      for (int a = 0; a < 3; ++a) {
        CHECK(once[a] >= axes[a].lo);
        CHECK(once[a] <= axes[a].hi);
      }
    }
  }
}

TEST_CASE("config validation") {
  EnvConfig c;
  c.substeps = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EnvConfig{};
  c.commands.p_zero = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EnvConfig{};
  c.commands.vx = {1.0, -1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const EnvConfig d;
  const EnvConfig back = env_config_from_json(to_json(d));
  CHECK(to_json(back) == to_json(d));
  auto bad = to_json(d);
  bad["schema"] = "other";
  CHECK_THROWS_AS(env_config_from_json(bad), ConfigError);
}

TEST_CASE("reset") {
  LocomotionEnv a(test_config()), b(test_config());
  const Observation oa = a.reset(42), ob = b.reset(42);
  CHECK(bit_equal(oa, ob));

  CHECK(oa.segment<3>(obs_slot::kCommand) == a.command().cwiseProduct(kCommandScale));
  CHECK(oa[obs_slot::kClock] == 0.0);
  CHECK(oa[obs_slot::kClock + 1] == 1.0);
  CHECK(oa.segment<kNumJoints>(obs_slot::kJointPos).cwiseAbs().maxCoeff() <= 0.02);
  CHECK(oa.segment<kNumJoints>(obs_slot::kJointVel).isZero());
  CHECK(oa.segment<kNumJoints>(obs_slot::kLastAction).isZero());
  CHECK(a.state().base_linear_velocity.isZero());
  CHECK(a.episode_steps() == 0);

  const Observation oc = a.reset(43);
  CHECK_FALSE(bit_equal(oa, oc));
}

TEST_CASE("zero action holds the standing pose") {
  LocomotionEnv env(test_config());
  env.reset(1);
  env.set_command(Vec3::Zero());
  const JointVector zero = JointVector::Zero();
  for (int k = 0; k < 100; ++k) {  // 2 s
    const Transition tr = env.step(zero);
    REQUIRE_FALSE(tr.terminated);
    CHECK(tr.observation.allFinite());
  }
  CHECK(env.state().base_position.z() > 0.75);
  CHECK(std::abs(euler_zyx(env.state().base_orientation).pitch) < 0.15);
}

TEST_CASE("step bookkeeping") {
  LocomotionEnv env(test_config());
  env.reset(5);
  JointVector action = JointVector::Constant(0.1);
  const Transition first = env.step(action);
  CHECK(first.breakdown.term(7) == 0.0);
  CHECK(first.breakdown.term(14) == 0.0);
  CHECK(first.context.action == action);
  CHECK(first.observation.segment<kNumJoints>(obs_slot::kLastAction) == action);
  const ClockSignal clk = clock_signal(env.config().gait, 0.02);
  CHECK(first.observation[obs_slot::kClock] == clk.sin_phase);
  CHECK(first.observation[obs_slot::kClock + 1] == clk.cos_phase);

  const Transition second = env.step(JointVector::Zero());
  CHECK(std::abs(second.breakdown.term(7) - (-0.01 * 12 * 0.01)) < 1e-12);

  // action beyond the joint limits is clamped before use
  JointVector huge = JointVector::Constant(100.0);
  const Transition third = env.step(huge);
  const auto m = default_model();
  const JointVector target = m.q_default() + 0.5 * third.context.action;
  for (int j = 0; j < kNumJoints; ++j) CHECK(target[j] <= m.upper_limits()[j] + 1e-12);
  CHECK(third.context.action.maxCoeff() < 100.0);
  CHECK_THROWS_AS(env.step(JointVector::Constant(NAN)), InputError);
}

TEST_CASE("phase change fires on segment transitions") {
  LocomotionEnv env(test_config());
  env.reset(5);
  env.set_command(Vec3::Zero());
  int fired = 0;
  for (int k = 0; k < 110; ++k) {  // one full cycle of 2.2 s
    const Transition tr = env.step(JointVector::Zero());
    if (tr.context.phase_changed) {
      ++fired;
      CHECK(tr.breakdown.term(13) == 1.0);
    }
  }
  CHECK(fired == 4);
}

TEST_CASE("termination when the base is forced low") {
  LocomotionEnv env(test_config());
  env.reset(9);
  // without ground contact nothing can push the base back up within the step
  env.dynamics().options().contacts = false;
  env.mutable_state().base_position.z() = 0.6;
  env.mutable_state().base_linear_velocity.setZero();
  const Transition tr = env.step(JointVector::Zero());
  CHECK(tr.terminated);
  CHECK_FALSE(tr.truncated);
  CHECK(tr.breakdown.term(9) == -1.0);
}

TEST_CASE("truncation at the episode cap") {
  EnvConfig c = test_config();
  c.max_episode_steps = 5;
  LocomotionEnv env(c);
  env.reset(2);
  for (int k = 0; k < 4; ++k) CHECK_FALSE(env.step(JointVector::Zero()).truncated);
  const Transition tr = env.step(JointVector::Zero());
  CHECK(tr.truncated);
  CHECK_FALSE(tr.terminated);
}

TEST_CASE("divergence terminates with r9") {
  LocomotionEnv env(test_config());
  env.reset(9);
  env.mutable_state().qd[3] = NAN;
  const Transition tr = env.step(JointVector::Zero());
  CHECK(tr.terminated);
  CHECK(tr.info.diverged);
  CHECK(tr.reward == -1.0);
}

TEST_CASE("command resampling and pinning") {
  EnvConfig c = test_config();
  c.commands.resample_interval = 0.1;
  LocomotionEnv env(c);
  env.reset(4);
  const Vec3 before = env.command();
  for (int k = 0; k < 5; ++k) env.step(JointVector::Zero());
  CHECK(env.command() != before);

  env.set_command(Vec3(3.0, 0.0, 0.0));
  CHECK(env.command() == Vec3(1.0, 0.0, 0.0));
  CHECK(env.observation()[obs_slot::kCommand] == 2.0);
  for (int k = 0; k < 10; ++k) env.step(JointVector::Zero());
  CHECK(env.command() == Vec3(1.0, 0.0, 0.0));
}

TEST_CASE("determinism and save/load") {
  LocomotionEnv a(test_config()), b(test_config());
  a.reset(77);
  b.reset(77);
  Rng rng = make_rng(1);
  for (int k = 0; k < 30; ++k) {
    JointVector act;
    for (int j = 0; j < kNumJoints; ++j) act[j] = 0.3 * standard_normal(rng);
    const Transition ta = a.step(act), tb = b.step(act);
    REQUIRE(bit_equal(ta.observation, tb.observation));
    REQUIRE(ta.reward == tb.reward);
  }
  BinaryWriter w;
  a.save(w);
  LocomotionEnv c(test_config(99));
  BinaryReader r(w.data());
  c.load(r);
  CHECK(r.done());
  CHECK(bit_equal(c.observation(), a.observation()));
  for (int k = 0; k < 10; ++k) {
    const Transition ta = a.step(JointVector::Zero()), tc = c.step(JointVector::Zero());
    CHECK(bit_equal(ta.observation, tc.observation));
  }
  BinaryReader truncated(std::string_view(w.data()).substr(0, 20));
  CHECK_THROWS_AS(c.load(truncated), FormatError);
}

TEST_CASE("batch stepping equals independent envs") {
  const EnvConfig cfg = test_config();
  Rng rng = make_rng(8);

  SUBCASE("N = 1") {
    LocomotionBatch batch(cfg, 1);
    LocomotionEnv single(cfg);
    batch.reset_with({123});
    single.reset(123);
    BatchStep out;
    for (int k = 0; k < 40; ++k) {
      Eigen::MatrixXd act(kActDim, 1);
      for (int j = 0; j < kActDim; ++j) act(j, 0) = 0.2 * standard_normal(rng);
      batch.step(act, out);
      const Transition tr = single.step(act.col(0));
      REQUIRE(bit_equal(out.obs.col(0), tr.observation));
      REQUIRE(out.reward[0] == tr.reward);
    }
  }

  SUBCASE("seeds (a, b) across worker counts") {
    auto pool = std::make_shared<ThreadPool>(2);
    LocomotionBatch batch(cfg, 2, pool);
    LocomotionEnv ea(cfg), eb(cfg);
    batch.reset_with({5, 6});
    ea.reset(5);
    eb.reset(6);
    BatchStep out;
    for (int k = 0; k < 40; ++k) {
      Eigen::MatrixXd act(kActDim, 2);
      for (int i = 0; i < act.size(); ++i) act.data()[i] = 0.2 * standard_normal(rng);
      batch.step(act, out);
      REQUIRE(bit_equal(out.obs.col(0), ea.step(act.col(0)).observation));
      REQUIRE(bit_equal(out.obs.col(1), eb.step(act.col(1)).observation));
    }
  }
}

TEST_CASE("batch auto-reset") {
  EnvConfig cfg = test_config();
  cfg.max_episode_steps = 3;
  LocomotionBatch batch(cfg, 3);
  batch.reset(1);
  LocomotionEnv probe(cfg);
  BatchStep out;
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(kActDim, 3);
  batch.step(zero, out);
  batch.step(zero, out);
  batch.env(1).mutable_state().base_position.z() = 0.5;
  batch.step(zero, out);
  CHECK(out.finished.size() == 3);
  CHECK(out.terminated[1]);
  CHECK(out.truncated[0]);
  for (const auto& ep : out.finished) CHECK(ep.length == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(out.obs(obs_slot::kClock, i) == 0.0);
    CHECK(out.obs(obs_slot::kClock + 1, i) == 1.0);
    CHECK(out.obs.col(i).segment<kNumJoints>(obs_slot::kLastAction).isZero());
    CHECK_FALSE(bit_equal(out.obs.col(i), out.terminal_obs.col(i)));
  }
  CHECK(out.stats.rows() == static_cast<int>(batch.stat_names().size()));
  CHECK_THROWS_AS(batch.step(Eigen::MatrixXd::Zero(kActDim, 2), out), InputError);
}

TEST_CASE("pendulum batch") {
  PendulumBatch p(PendulumConfig{}, 4);
  p.reset(3);
  BatchStep out;
  // no torque: the pole falls and the episode terminates well before the cap
  int steps = 0;
  while (out.finished.empty()) {
    p.step(Eigen::MatrixXd::Zero(1, 4), out);
    ++steps;
    REQUIRE(steps < 200);
  }
  CHECK(out.finished.front().terminated);
  CHECK(out.reward.maxCoeff() <= 1.0);
  const Eigen::MatrixXd obs = p.observations();
  CHECK(((obs.row(0).array().square() + obs.row(1).array().square()) - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("thread pool") {
  ThreadPool pool(3);
  std::vector<int> hits(1000, 0);
  pool.parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(pool.parallel_for(10, [](std::size_t i) {
    if (i == 7) throw InputError("boom");
  }),
                  InputError);
  pool.parallel_for(5, [&](std::size_t i) { hits[i] += 1; });
  CHECK(hits[4] == 2);
}
