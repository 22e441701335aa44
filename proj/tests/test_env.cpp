#include <catch2/catch_amalgamated.hpp>

#include <scanrl/bvh.hpp>
#include <scanrl/env.hpp>
#include <scanrl/mesh.hpp>
#include <scanrl/rng.hpp>

using namespace scanrl;

namespace {

SensorSpec quiet_spec() {
  SensorSpec spec;
  spec.points_per_profile = 129;
  spec.noise_sigma_z = 0.0;
  spec.speckle_strength = 0.0;
  return spec;
}

EpisodeSpec plate_episode(double start_x = 0.0, double end_x = 500.0) {
  EpisodeSpec ep;
  ep.start_pose = SensorPose::look(Vec3(start_x, 0, 400), Vec3(1, 0, 0), Vec3(0, 0, -1));
  ep.advance_dir = Vec3(1, 0, 0);
  ep.end_point = Vec3(end_x, 0, 0);
  ep.end_normal = Vec3(1, 0, 0);
  return ep;
}

}  // namespace

TEST_CASE("clip_scalar clamps and validates") {
  CHECK(clip_scalar(0.5, -1, 1) == 0.5);
  CHECK(clip_scalar(-3, -1, 1) == -1.0);
  CHECK(clip_scalar(3, -1, 1) == 1.0);
  CHECK_THROWS_AS(clip_scalar(0, 1, -1), Error);
}

TEST_CASE("reward boundary values are exact") {
  const SensorSpec spec;  // W_d 400, Z_r 250
  const double wd = spec.working_distance;
  const double half = 0.5 * spec.z_range;

  CHECK(reward_distance(wd, wd, spec.z_range) == 0.0);
  CHECK(reward_distance(wd + half, wd, spec.z_range) == -1.0);
  CHECK(reward_distance(wd - half, wd, spec.z_range) == -1.0);
  CHECK(reward_distance(wd + spec.z_range, wd, spec.z_range) == -1.0);  // saturates
  CHECK(reward_distance(std::nullopt, wd, spec.z_range) == -1.0);

  CHECK(reward_orientation(0.0, 30.0) == 0.0);
  CHECK(reward_orientation(30.0, 30.0) == -1.0);
  CHECK(reward_orientation(-30.0, 30.0) == -1.0);
  CHECK(reward_orientation(90.0, 30.0) == -1.0);
  CHECK(reward_orientation(std::nullopt, 30.0) == -1.0);

  CHECK(reward_spacing(0.5, 0.5) == 0.0);
  CHECK(reward_spacing(1.0, 0.5) == -1.0);  // twice the optimum
  CHECK(reward_spacing(0.0, 0.5) == -1.0);  // standing still
  CHECK(reward_spacing(-0.5, 0.5) == -1.0);  // moving backward saturates
  CHECK(reward_spacing(std::nullopt, 0.5) == -1.0);

  // quadratic in between
  CHECK(reward_distance(wd + 0.5 * half, wd, spec.z_range) == -0.25);
  CHECK(reward_orientation(15.0, 30.0) == -0.25);
  CHECK(reward_spacing(0.75, 0.5) == -0.25);
}

TEST_CASE("reward_total applies the weights") {
  const SensorSpec spec;
  RewardWeights w;
  w.distance = 0.5;
  w.orientation = 0.3;
  w.spacing = 0.2;
  const RewardBreakdown r = reward_total(400.0 + 62.5, 15.0, 0.75, spec, 30.0, 0.5, w);
  CHECK(r.r_distance == -0.25);
  CHECK(r.r_orientation == -0.25);
  CHECK(r.r_spacing == -0.25);
  CHECK(r.total == 0.5 * -0.25 + 0.3 * -0.25 + 0.2 * -0.25);

  // default weights average the three terms
  const RewardBreakdown d =
      reward_total(std::nullopt, std::nullopt, std::nullopt, spec, 30.0, 0.5, RewardWeights{});
  CHECK(d.total == Catch::Approx(-1.0).margin(1e-15));
}

TEST_CASE("dynamic action limit matches the branch rules") {
  const double wd = 400.0;
  ActionBounds b;
  b.dy_max = 1.0;
  b.dz_max = 0.8;
  b.dtheta_max = 0.6;
  Rng rng(0x64616c31);

  for (int i = 0; i < 20000; ++i) {
    const ActionDelta raw{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const bool has_d = rng.uniform() < 0.8;
    const bool has_a = rng.uniform() < 0.8;
    const std::optional<double> d = has_d ? std::optional<double>(rng.uniform(300, 500))
                                          : std::nullopt;
    const std::optional<double> a = has_a ? std::optional<double>(rng.uniform(-40, 40))
                                          : std::nullopt;
    const ActionDelta out = dynamic_action_limit(raw, d, a, wd, b);

    const double dy_expect = clip_scalar(raw.dy, -b.dy_max, b.dy_max);
    double dz_lo = -b.dz_max, dz_hi = b.dz_max;
    if (d) ((*d >= wd) ? dz_lo : dz_hi) = 0.0;
    double dt_lo = -b.dtheta_max, dt_hi = b.dtheta_max;
    if (a) ((*a >= 0.0) ? dt_lo : dt_hi) = 0.0;

    REQUIRE(out.dy == dy_expect);
    REQUIRE(out.dz == clip_scalar(raw.dz, dz_lo, dz_hi));
    REQUIRE(out.dtheta == clip_scalar(raw.dtheta, dt_lo, dt_hi));
    // the published invariant: zero violations of the branch ranges
    REQUIRE(out.dz >= dz_lo);
    REQUIRE(out.dz <= dz_hi);
    REQUIRE(out.dtheta >= dt_lo);
    REQUIRE(out.dtheta <= dt_hi);

    EnvState st;
    st.d_mm = d;
    st.alpha_deg = a;
    const ActionDelta via_state = dynamic_action_limit(st, raw, b, wd);
    REQUIRE(via_state.dy == out.dy);
    REQUIRE(via_state.dz == out.dz);
    REQUIRE(via_state.dtheta == out.dtheta);
  }
}

TEST_CASE("env reset populates the observation") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  ScanEnv env(&accel, quiet_spec(), plate_episode(), 1);
  const Eigen::VectorXd obs = env.reset();
  REQUIRE(obs.size() == ScanEnv::kObsDim);
  CHECK(obs[0] == 0.0);
  CHECK(obs[1] == 0.0);
  CHECK(obs[2] == 0.0);
  CHECK(obs[3] == 0.0);
  // reset seeds the spacing at the optimum
  CHECK(obs[6] == 0.0);
  CHECK(obs[7] == 1.0);
  const EnvState& st = env.state();
  REQUIRE(st.d_mm.has_value());
  CHECK(obs[4] == (*st.d_mm - 400.0) / 125.0);
  REQUIRE(st.alpha_deg.has_value());
  CHECK(obs[5] == *st.alpha_deg / 30.0);
}

TEST_CASE("env steps move the pose in the sensor frame") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  ScanEnv env(&accel, quiet_spec(), plate_episode(), 1);
  env.reset();

  // slant mean on a plate exceeds the height, so D > W_d and dz in [0, max]
  const auto res = env.step(ActionDelta{0.5, 1.0, 0.0});
  CHECK(res.applied.dy == 0.5);
  CHECK(res.applied.dz == 1.0);
  CHECK(env.state().pose.position.x() == 0.5);
  CHECK(env.state().pose.position.z() == 399.0);  // dz moves along the laser axis
  // length scale is the 500 mm start-to-end distance
  CHECK(res.obs[1] == Catch::Approx(0.5 / 500.0).margin(1e-15));
  CHECK(res.obs[2] == Catch::Approx(-1.0 / 500.0).margin(1e-15));
  REQUIRE(env.state().ds_mm.has_value());
  CHECK(*env.state().ds_mm == Catch::Approx(0.5).margin(1e-9));
  // breakdown recomputes from the state exactly
  const RewardBreakdown oracle = reward_total(env.state(), env.sensor(), env.episode());
  CHECK(res.breakdown.total == oracle.total);
  CHECK(res.reward == oracle.total);

  // attempting to move away from the surface while D > W_d is clamped
  const auto res2 = env.step(ActionDelta{0.0, -1.0, 0.0});
  CHECK(res2.applied.dz == 0.0);
  CHECK(env.state().pose.position.z() == 399.0);
}

TEST_CASE("pitch sign convention on a flat plate") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  EpisodeSpec ep = plate_episode();
  ep.bounds.dtheta_max = 5.0;
  ep.theta_max = 3.0;
  ScanEnv env(&accel, quiet_spec(), ep, 1);
  env.reset();
  // alpha = +0 on the level plate, so positive pitch is allowed
  const auto r1 = env.step(ActionDelta{0, 0, 5.0});
  CHECK(r1.applied.dtheta == 3.0);  // mechanical limit wins
  CHECK(env.state().theta_deg == 3.0);
  REQUIRE(env.state().alpha_deg.has_value());
  // pitching the sensor +3 deg over a flat plate reads alpha = -3 deg
  CHECK(*env.state().alpha_deg == Catch::Approx(-3.0).margin(1e-9));

  // now alpha < 0, positive corrections are blocked, negative allowed
  const auto r2 = env.step(ActionDelta{0, 0, 5.0});
  CHECK(r2.applied.dtheta == 0.0);
  const auto r3 = env.step(ActionDelta{0, 0, -10.0});
  CHECK(r3.applied.dtheta == -5.0);
  CHECK(env.state().theta_deg == -2.0);
}

TEST_CASE("episode ends when the centroid crosses the end plane") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  ScanEnv env(&accel, quiet_spec(), plate_episode(0.0, 2.0), 1);
  env.reset();
  auto res = env.step(ActionDelta{1.0, 0, 0});
  CHECK_FALSE(res.done);
  res = env.step(ActionDelta{1.0, 0, 0});
  CHECK(res.done);
  CHECK(res.reason == DoneReason::ReachedEnd);
  CHECK_THROWS_AS(env.step(ActionDelta{}), Error);
}

TEST_CASE("episode truncates at max_steps") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  EpisodeSpec ep = plate_episode();
  ep.max_steps = 4;
  ScanEnv env(&accel, quiet_spec(), ep, 1);
  env.reset();
  ScanEnv::StepResult res;
  for (int i = 0; i < 4; ++i) {
    res = env.step(ActionDelta{0.1, 0, 0});
    CHECK(res.done == (i == 3));
  }
  CHECK(res.reason == DoneReason::MaxSteps);
}

TEST_CASE("losing the surface past patience aborts the episode") {
  // narrow plate: advancing off its far edge leaves the fan in the void
  const MeshAccel accel(make_plate(40, 2000, 0, 0, -1000));
  EpisodeSpec ep = plate_episode(0.0, 500.0);
  ep.patience = 5;
  ScanEnv env(&accel, quiet_spec(), ep, 1);
  env.reset();
  ScanEnv::StepResult res;
  int steps = 0;
  do {
    res = env.step(ActionDelta{1.0, 0, 0});
    ++steps;
    REQUIRE(steps < 200);
  } while (!res.done);
  CHECK(res.reason == DoneReason::LostSurface);
  CHECK(steps > 40);

  // sentinel observation values with no return
  CHECK(res.obs[4] == -1.0);
  CHECK(res.obs[5] == -1.0);
  CHECK(res.obs[6] == -1.0);
  CHECK(res.obs[7] == 0.0);
  CHECK(res.breakdown.r_distance == -1.0);
  CHECK(res.breakdown.r_orientation == -1.0);
  CHECK(res.breakdown.r_spacing == -1.0);
}

TEST_CASE("reset throws over the void") {
  const MeshAccel accel(make_plate(40, 40));
  ScanEnv env(&accel, quiet_spec(), plate_episode(-500.0), 1);
  CHECK_THROWS_WITH(env.reset(), Catch::Matchers::ContainsSubstring("no surface"));
}

TEST_CASE("step_normalized is the scaled step") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  EpisodeSpec ep = plate_episode();
  ep.bounds = ActionBounds{2.0, 0.5, 4.0};
  ScanEnv a(&accel, quiet_spec(), ep, 77);
  ScanEnv b(&accel, quiet_spec(), ep, 77);
  a.reset();
  b.reset();
  const auto ra = a.step_normalized(Eigen::Vector3d(0.25, 0.5, -0.75));
  const auto rb = b.step(ActionDelta{0.25 * 2.0, 0.5 * 0.5, -0.75 * 4.0});
  CHECK(ra.reward == rb.reward);
  CHECK(ra.obs == rb.obs);
  CHECK(ra.applied.dy == rb.applied.dy);
  CHECK(ra.applied.dz == rb.applied.dz);
  CHECK(ra.applied.dtheta == rb.applied.dtheta);
}

TEST_CASE("multi-pass env cycles passes in evaluation order") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  std::vector<EpisodeSpec> passes = {plate_episode(0.0), plate_episode(50.0)};
  MultiPassEnv env(&accel, quiet_spec(), passes, StartJitter{}, 5, false);
  env.reset();
  CHECK(env.inner().episode().start_pose.position.x() == 0.0);
  env.reset();
  CHECK(env.inner().episode().start_pose.position.x() == 50.0);
  env.reset();
  CHECK(env.inner().episode().start_pose.position.x() == 0.0);
}

TEST_CASE("multi-pass env jitters deterministically and recovers from bad jitter") {
  const MeshAccel accel(make_plate(2000, 2000, 0, -1000, -1000));
  std::vector<EpisodeSpec> passes = {plate_episode()};

  MultiPassEnv a(&accel, quiet_spec(), passes, StartJitter{15, 6}, 9, true);
  MultiPassEnv b(&accel, quiet_spec(), passes, StartJitter{15, 6}, 9, true);
  bool jittered = false;
  for (int i = 0; i < 5; ++i) {
    const Eigen::VectorXd oa = a.reset();
    const Eigen::VectorXd ob = b.reset();
    CHECK(oa == ob);
    if (a.inner().state().pose.position.z() != 400.0) jittered = true;
    const auto ra = a.step_normalized(Eigen::Vector3d(0.5, 0, 0));
    const auto rb = b.step_normalized(Eigen::Vector3d(0.5, 0, 0));
    CHECK(ra.reward == rb.reward);
  }
  CHECK(jittered);

  // jitter far beyond the measurement band: the shrinking retry must land
  // a valid start within three attempts
  MultiPassEnv extreme(&accel, quiet_spec(), passes, StartJitter{5000, 0}, 3, true);
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd obs;
    REQUIRE_NOTHROW(obs = extreme.reset());
    CHECK(obs[7] == 1.0);
  }

  CHECK_THROWS_AS(MultiPassEnv(&accel, quiet_spec(), {}, StartJitter{}, 1, true), Error);
}
