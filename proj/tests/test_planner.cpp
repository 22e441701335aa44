#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <scanrl/mesh.hpp>
#include <scanrl/planner.hpp>

using namespace scanrl;
namespace fs = std::filesystem;

namespace {

SensorSpec quiet_spec() {
  SensorSpec s;
  s.noise_sigma_z = 0;
  s.speckle_strength = 0;
  s.points_per_profile = 255;
  return s;
}

EpisodeSpec base_episode() {
  EpisodeSpec ep;
  ep.max_steps = 5000;
  return ep;
}

MlpParams constant_policy(double dy, double dz, double dtheta) {
  MlpParams p = MlpParams::zeros(MlpDims{8, 4, 4, 3});
  p.bp << std::atanh(dy), std::atanh(dz), std::atanh(dtheta);
  return p;
}

}  // namespace

TEST_CASE("auto pass width follows the fan geometry") {
  const SensorSpec s = quiet_spec();
  CHECK(auto_pass_width(s) ==
        Catch::Approx(2.0 * 400.0 * std::tan(deg2rad(63.5) * 0.5) * 0.8).margin(1e-12));
}

TEST_CASE("boustrophedon lattice on a plate") {
  const TriangleMesh plate = make_plate(100.0, 37.5);
  const MeshAccel accel(plate);
  PlannerParams params;
  params.pass_width = 10.0;
  params.overlap = 0.2;
  const BoustrophedonPlan plan = plan_boustrophedon(accel, quiet_spec(), params);

  CHECK(plan.pass_width == 10.0);
  CHECK(plan.stride == 8.0);
  // advance +x makes the lateral axis -y: the interval is [-37.5, 0]
  CHECK(plan.lateral_axis == Vec3(0, -1, 0));
  CHECK(plan.lateral_min == -37.5);
  CHECK(plan.lateral_max == 0.0);
  REQUIRE(plan.passes.size() == 5);

  for (int k = 0; k < 5; ++k) {
    const PassSpec& p = plan.passes[k];
    CHECK(p.id == k);
    CHECK(p.lateral_lo == -37.5 + 8.0 * k);
    CHECK(p.lateral_hi == p.lateral_lo + 10.0);
    CHECK(p.advance == ((k % 2 == 0) ? Vec3(1, 0, 0) : Vec3(-1, 0, 0)));
    // forward passes start at the inset left edge, reverse at the right
    CHECK(p.start.x() == ((k % 2 == 0) ? 1.0 : 99.0));
    CHECK(p.end_point.x() == ((k % 2 == 0) ? 99.0 : 1.0));
    // the sensor stands one working distance above the plate
    CHECK(p.start.z() == 400.0);
  }
  // footprint centers stay over the part even on the overhanging last cell
  CHECK(plan.passes[0].start.y() == 32.5);
  CHECK(plan.passes[4].start.y() == 2.75);
}

TEST_CASE("zero overlap tiles the footprints edge to edge") {
  const TriangleMesh plate = make_plate(50.0, 33.0);
  PlannerParams params;
  params.pass_width = 7.3;
  params.overlap = 0.0;
  const BoustrophedonPlan plan = plan_boustrophedon(MeshAccel(plate), quiet_spec(), params);
  REQUIRE(plan.passes.size() >= 2);
  for (std::size_t k = 0; k + 1 < plan.passes.size(); ++k) {
    CHECK(plan.passes[k].lateral_hi == plan.passes[k + 1].lateral_lo);
  }
  CHECK(plan.passes.front().lateral_lo == plan.lateral_min);
  CHECK(plan.passes.back().lateral_hi >= plan.lateral_max);
}

TEST_CASE("random footprints never leave lateral gaps") {
  Rng rng(0x706c616e);
  for (int trial = 0; trial < 12; ++trial) {
    const double length = rng.uniform(30, 200);
    const double width = rng.uniform(10, 150);
    const double x0 = rng.uniform(-50, 50);
    const double y0 = rng.uniform(-50, 50);
    const TriangleMesh plate = make_plate(length, width, rng.uniform(-5, 20), x0, y0);

    PlannerParams params;
    params.pass_width = rng.uniform(3, 40);
    params.overlap = rng.uniform(0.0, 0.9);
    params.advance_axis = (rng.below(2) == 0) ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    const BoustrophedonPlan plan = plan_boustrophedon(MeshAccel(plate), quiet_spec(), params);

    CHECK(plan.stride == params.pass_width * (1.0 - params.overlap));
    REQUIRE(!plan.passes.empty());
    CHECK(plan.passes.front().lateral_lo == plan.lateral_min);
    CHECK(plan.passes.back().lateral_hi >= plan.lateral_max);
    for (std::size_t k = 0; k + 1 < plan.passes.size(); ++k) {
      REQUIRE(plan.passes[k].lateral_hi >= plan.passes[k + 1].lateral_lo);
      CHECK(plan.passes[k + 1].lateral_lo == plan.passes[k].lateral_lo + plan.stride);
      CHECK(plan.passes[k + 1].advance == Vec3(-plan.passes[k].advance));
    }
    // every pass center lands on the part
    for (const auto& p : plan.passes) {
      const double center = p.start.dot(plan.lateral_axis);
      CHECK(center >= plan.lateral_min - 1e-12);
      CHECK(center <= plan.lateral_max + 1e-12);
    }
  }
}

TEST_CASE("start height tracks the surface under the pass") {
  const TriangleMesh plate = make_plate(60.0, 40.0, 12.5);
  PlannerParams params;
  params.pass_width = 15.0;
  const BoustrophedonPlan plan = plan_boustrophedon(MeshAccel(plate), quiet_spec(), params);
  for (const auto& p : plan.passes) {
    CHECK(p.start.z() == 412.5);
  }
}

TEST_CASE("planner rejects bad parameters") {
  const TriangleMesh plate = make_plate(10, 10);
  const MeshAccel accel(plate);
  PlannerParams params;
  params.overlap = -0.1;
  CHECK_THROWS_AS(plan_boustrophedon(accel, quiet_spec(), params), ConfigError);
  params.overlap = 1.0;
  CHECK_THROWS_AS(plan_boustrophedon(accel, quiet_spec(), params), ConfigError);
  params.overlap = 0.2;
  params.pass_width = -1.0;
  CHECK_THROWS_AS(plan_boustrophedon(accel, quiet_spec(), params), ConfigError);
  params.pass_width = 0.0;
  params.advance_axis = Vec3(0, 0.5, 0.5);
  CHECK_THROWS_AS(plan_boustrophedon(accel, quiet_spec(), params), ConfigError);
}

TEST_CASE("pass episode inherits the base and frames the pass") {
  PassSpec pass;
  pass.start = Vec3(5, 7, 410);
  pass.end_point = Vec3(95, 7, 0);
  pass.advance = Vec3(1, 0, 0);
  EpisodeSpec base;
  base.ds_opt = 0.75;
  base.alpha_max = 20.0;
  base.max_steps = 321;
  const EpisodeSpec ep = pass_episode(pass, base);
  CHECK(ep.start_pose.position == pass.start);
  CHECK(ep.start_pose.y_axis == Vec3(1, 0, 0));
  CHECK(ep.start_pose.laser_axis == Vec3(0, 0, -1));
  CHECK(ep.advance_dir == pass.advance);
  CHECK(ep.end_point == pass.end_point);
  CHECK(ep.end_normal == pass.advance);
  CHECK(ep.ds_opt == 0.75);
  CHECK(ep.alpha_max == 20.0);
  CHECK(ep.max_steps == 321);
}

TEST_CASE("policy rollout walks a pass to its end") {
  const TriangleMesh plate = make_plate(100.0, 40.0);
  const MeshAccel accel(plate);
  PlannerParams params;
  params.pass_width = 30.0;
  const BoustrophedonPlan plan = plan_boustrophedon(accel, quiet_spec(), params);
  REQUIRE(!plan.passes.empty());

  // a constant half-speed advance: 0.5 mm per step from x=1 to x=99
  const MlpParams policy = constant_policy(0.5, 0.0, 0.0);
  const PassRollout roll =
      rollout_policy(accel, quiet_spec(), policy, plan.passes[0], base_episode(), 7);

  CHECK(roll.reason == DoneReason::ReachedEnd);
  REQUIRE(roll.records.size() == 197);
  CHECK(roll.trace.size() == roll.records.size());
  CHECK(roll.advance == plan.passes[0].advance);
  for (std::size_t i = 0; i < roll.records.size(); ++i) {
    const auto& r = roll.records[i];
    CHECK(r.capture);
    REQUIRE(r.exact_pose.has_value());
    CHECK(r.position.x() == Catch::Approx(1.0 + 0.5 * i).margin(1e-12));
    CHECK(r.theta_deg == 0.0);
  }
  // level plate at the working distance: the slant-range mean sits just
  // above W_d (only near-nadir rays land on the narrow part) and the
  // reward stays negligible
  CHECK(roll.trace.d_mm[0] > 400.0);
  CHECK(roll.trace.d_mm[0] < 401.0);
  CHECK(std::abs(roll.trace.total.back()) < 1e-4);
  CHECK(roll.trace.done.back() == 1);
  CHECK(roll.trace.done[0] == 0);
}

TEST_CASE("frozen policy runs into the step cap") {
  const TriangleMesh plate = make_plate(100.0, 40.0);
  const MeshAccel accel(plate);
  PlannerParams params;
  params.pass_width = 30.0;
  const BoustrophedonPlan plan = plan_boustrophedon(accel, quiet_spec(), params);

  EpisodeSpec base = base_episode();
  base.max_steps = 10;
  const MlpParams frozen = constant_policy(0.0, 0.0, 0.0);
  const PassRollout roll =
      rollout_policy(accel, quiet_spec(), frozen, plan.passes[0], base, 7);
  CHECK(roll.reason == DoneReason::MaxSteps);
  CHECK(roll.records.size() == 11);
  CHECK(roll.records.back().position == roll.records.front().position);
}

TEST_CASE("static baseline advances in constant steps") {
  const TriangleMesh plate = make_plate(100.0, 37.5);
  const MeshAccel accel(plate);
  PlannerParams params;
  params.pass_width = 10.0;
  params.overlap = 0.2;
  const BoustrophedonPlan plan = plan_boustrophedon(accel, quiet_spec(), params);

  const PassRollout roll =
      make_static_baseline(accel, quiet_spec(), plan.passes[0], base_episode(), 0.5, 7);
  CHECK(roll.reason == DoneReason::ReachedEnd);
  REQUIRE(roll.records.size() == 197);
  CHECK(roll.trace.size() == 197);
  for (std::size_t i = 0; i < roll.records.size(); ++i) {
    CHECK(roll.records[i].position.x() == 1.0 + 0.5 * i);
    CHECK(roll.records[i].theta_deg == 0.0);
    CHECK(roll.records[i].capture);
  }
  // level plate: the same fan geometry repeats at every step, so the
  // measured distance is bitwise constant and the spacing exact
  for (std::size_t i = 1; i < roll.trace.size(); ++i) {
    CHECK(roll.trace.d_mm[i] == roll.trace.d_mm[1]);
    CHECK(roll.trace.ds_mm[i] == 0.5);
    CHECK(std::abs(roll.trace.total[i]) < 1e-4);
  }
  CHECK(roll.trace.d_mm[1] > 400.0);
  CHECK(roll.trace.d_mm[1] < 401.0);
  CHECK(roll.trace.done.back() == 1);

  CHECK_THROWS_AS(
      make_static_baseline(accel, quiet_spec(), plan.passes[0], base_episode(), 0.0, 7),
      ConfigError);
}

TEST_CASE("baseline keeps going over a dropout") {
  // a 30 mm hole in the middle of the plate: profiles there are invalid but
  // the straight path must carry on to the far edge
  TriangleMesh left = make_plate(40.0, 40.0);
  const TriangleMesh right = make_plate(30.0, 40.0, 0.0, 70.0, 0.0);
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  auto add_mesh = [&](const TriangleMesh& m) {
    const int base = static_cast<int>(verts.size());
    for (const auto& v : m.vertices) verts.push_back(v);
    for (const auto& t : m.triangles) tris.push_back({t[0] + base, t[1] + base, t[2] + base});
  };
  add_mesh(left);
  add_mesh(right);
  const TriangleMesh both = TriangleMesh::from_indexed(std::move(verts), tris);
  const MeshAccel accel(both);

  PlannerParams params;
  params.pass_width = 30.0;
  const BoustrophedonPlan plan = plan_boustrophedon(accel, quiet_spec(), params);
  const PassRollout roll =
      make_static_baseline(accel, quiet_spec(), plan.passes[0], base_episode(), 1.0, 7);
  CHECK(roll.reason == DoneReason::ReachedEnd);
  bool saw_invalid = false;
  for (std::size_t i = 0; i < roll.trace.size(); ++i) {
    if (std::isnan(roll.trace.d_mm[i])) saw_invalid = true;
  }
  CHECK(saw_invalid);
  CHECK(roll.records.back().position.x() >= 99.0);
}

TEST_CASE("assemble lifts transits between passes") {
  PassRollout r0, r1;
  r0.advance = Vec3(1, 0, 0);
  r1.advance = Vec3(-1, 0, 0);
  SensorPose p0 = SensorPose::look(Vec3(1, 30, 400), Vec3(1, 0, 0), Vec3(0, 0, -1));
  for (int i = 0; i < 3; ++i) {
    p0.position.x() = 1.0 + i;
    r0.records.push_back(detail::pose_record(p0, 0.0, true));
    }
  SensorPose p1 = SensorPose::look(Vec3(99, 22, 405), Vec3(-1, 0, 0), Vec3(0, 0, -1));
  for (int i = 0; i < 2; ++i) {
    p1.position.x() = 99.0 - i;
    r1.records.push_back(detail::pose_record(p1, 0.0, true));
  }

  const Trajectory traj = assemble({r0, r1}, 20.0);
  REQUIRE(traj.records.size() == 7);
  REQUIRE(traj.pass_advance.size() == 2);
  CHECK(traj.pass_advance[0] == Vec3(1, 0, 0));
  CHECK(traj.pass_advance[1] == Vec3(-1, 0, 0));
  for (std::size_t i = 0; i < traj.records.size(); ++i) {
    CHECK(traj.records[i].idx == static_cast<int>(i));
  }
  CHECK(traj.records[2].pass_id == 0);
  const TrajectoryRecord& lift = traj.records[3];
  const TrajectoryRecord& shift = traj.records[4];
  CHECK_FALSE(lift.capture);
  CHECK_FALSE(shift.capture);
  CHECK(lift.pass_id == 1);
  // clearance above the higher of the two pass endpoints
  CHECK(lift.position.z() == 425.0);
  CHECK(shift.position.z() == 425.0);
  CHECK(lift.position.head<2>() == Vec3(3, 30, 0).head<2>());
  CHECK(shift.position.head<2>() == Vec3(99, 22, 0).head<2>());
  CHECK_FALSE(lift.exact_pose.has_value());
  CHECK(traj.records[5].pass_id == 1);

  CHECK_THROWS_AS(assemble({PassRollout{}}, 20.0), Error);
}

TEST_CASE("record pose reconstruction from the quaternion") {
  const SensorPose pose = SensorPose::look(Vec3(3, -2, 410), Vec3(0, 1, 0), Vec3(0, 0, -1));
  TrajectoryRecord r;
  r.position = pose.position;
  r.orientation = pose.orientation();
  const SensorPose back = record_pose(r);
  CHECK(back.position == pose.position);
  CHECK((back.x_axis - pose.x_axis).norm() < 1e-14);
  CHECK((back.y_axis - pose.y_axis).norm() < 1e-14);
  CHECK((back.laser_axis - pose.laser_axis).norm() < 1e-14);

  // the exact pose wins when present, with the stored position applied
  TrajectoryRecord e = r;
  e.exact_pose = pose;
  e.position = Vec3(9, 9, 9);
  const SensorPose exact = record_pose(e);
  CHECK(exact.position == Vec3(9, 9, 9));
  CHECK(exact.y_axis == pose.y_axis);
}

namespace {

Trajectory sample_trajectory() {
  PassRollout r0, r1;
  r0.advance = Vec3(1, 0, 0);
  r1.advance = Vec3(-1, 0, 0);
  SensorPose p0 = SensorPose::look(Vec3(1, 30, 400), Vec3(1, 0, 0), Vec3(0, 0, -1));
  Rng rng(0x74726a73);
  for (int i = 0; i < 4; ++i) {
    p0.position = Vec3(rng.uniform(0, 100), rng.uniform(0, 40), rng.uniform(395, 405));
    r0.records.push_back(detail::pose_record(p0.pitched(rng.uniform(-3, 3)),
                                             rng.uniform(-3, 3), true));
  }
  SensorPose p1 = SensorPose::look(Vec3(99, 22, 405), Vec3(-1, 0, 0), Vec3(0, 0, -1));
  for (int i = 0; i < 3; ++i) {
    p1.position.x() = 99.0 - rng.uniform(0, 1);
    r1.records.push_back(detail::pose_record(p1, 0.0, true));
  }
  Trajectory traj = assemble({r0, r1}, 20.0);
  traj.mode = "rl";
  traj.seed = 424242;
  traj.mesh_digest = "00ff00ff00ff00ff";
  traj.config_digest = "123456789abcdef0";
  return traj;
}

void check_equal(const Trajectory& a, const Trajectory& b) {
  CHECK(b.mode == a.mode);
  CHECK(b.seed == a.seed);
  CHECK(b.mesh_digest == a.mesh_digest);
  CHECK(b.config_digest == a.config_digest);
  REQUIRE(b.pass_advance.size() == a.pass_advance.size());
  for (std::size_t i = 0; i < a.pass_advance.size(); ++i) {
    CHECK(b.pass_advance[i] == a.pass_advance[i]);
  }
  REQUIRE(b.records.size() == a.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(b.records[i].idx == a.records[i].idx);
    CHECK(b.records[i].pass_id == a.records[i].pass_id);
    CHECK(b.records[i].capture == a.records[i].capture);
    CHECK(b.records[i].position == a.records[i].position);
    CHECK(b.records[i].orientation.coeffs() == a.records[i].orientation.coeffs());
    CHECK(b.records[i].theta_deg == a.records[i].theta_deg);
  }
}

}  // namespace

TEST_CASE("trajectory csv round-trip is exact") {
  const fs::path dir = fs::temp_directory_path() / "scanrl_traj_csv";
  fs::create_directories(dir);
  const Trajectory traj = sample_trajectory();
  const std::string path = (dir / "t.csv").string();
  export_trajectory(traj, path);

  // header comments carry the provenance
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  CHECK(first == "# format=scanrl-trajectory");
  in.close();

  check_equal(traj, load_trajectory(path));
  fs::remove_all(dir);
}

TEST_CASE("trajectory json round-trip is exact") {
  const fs::path dir = fs::temp_directory_path() / "scanrl_traj_json";
  fs::create_directories(dir);
  const Trajectory traj = sample_trajectory();
  const std::string path = (dir / "t.json").string();
  export_trajectory(traj, path);
  check_equal(traj, load_trajectory(path));

  // explicit format overrides the extension sniffing
  const std::string odd = (dir / "t.data").string();
  export_trajectory(traj, odd, TrajectoryFormat::Json);
  check_equal(traj, load_trajectory(odd, TrajectoryFormat::Json));
  fs::remove_all(dir);
}

TEST_CASE("trajectory loader rejects broken files") {
  const fs::path dir = fs::temp_directory_path() / "scanrl_traj_bad";
  fs::create_directories(dir);

  CHECK_THROWS_AS(load_trajectory((dir / "gone.csv").string()), Error);

  std::ofstream(dir / "noheader.csv") << "a,b,c\n1,2,3\n";
  CHECK_THROWS_AS(load_trajectory((dir / "noheader.csv").string()), Error);

  std::ofstream(dir / "short.csv") << "idx,pass_id,capture,x_mm,y_mm,z_mm,qw,qx,qy,qz,theta_deg\n"
                                   << "0,0,1,1.0,2.0\n";
  CHECK_THROWS_AS(load_trajectory((dir / "short.csv").string()), Error);

  std::ofstream(dir / "foreign.json") << R"({"format":"other","records":[]})";
  CHECK_THROWS_AS(load_trajectory((dir / "foreign.json").string()), Error);

  std::ofstream(dir / "broken.json") << "{ nope";
  CHECK_THROWS_AS(load_trajectory((dir / "broken.json").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("step trace csv lists every column") {
  StepTrace trace;
  RewardBreakdown rb;
  rb.r_distance = -0.25;
  rb.r_orientation = -0.5;
  rb.r_spacing = 0.0;
  rb.total = -0.25;
  trace.push(Vec3(1, 2, 3), 1.5, 400.0, -2.0, 0.5, rb, false);
  trace.push(Vec3(1.5, 2, 3), 1.5, std::nullopt, std::nullopt, std::nullopt, rb, true);

  const fs::path dir = fs::temp_directory_path() / "scanrl_trace";
  fs::create_directories(dir);
  const std::string path = (dir / "trace.csv").string();
  save_trace_csv(trace, path, {"mode=rl"});

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# mode=rl");
  std::getline(in, line);
  CHECK(line == "step,px_mm,py_mm,pz_mm,theta_deg,d_mm,alpha_deg,ds_mm,r_d,r_alpha,r_ds,total,done");
  std::getline(in, line);
  CHECK(line == "0,1,2,3,1.5,4e+02,-2,0.5,-0.25,-0.5,0,-0.25,0");
  std::getline(in, line);
  CHECK(line.rfind("1,1.5,2,3,1.5,nan", 0) == 0);
  CHECK(line.back() == '1');
  fs::remove_all(dir);
}
