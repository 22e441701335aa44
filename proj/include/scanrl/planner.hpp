#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scanrl/env.hpp"
#include "scanrl/mlp.hpp"

namespace scanrl {

struct PlannerParams {
  double pass_width = 0;       // mm footprint per pass, 0 = auto from the FOV
  double overlap = 0.2;        // fraction of pass_width shared with the neighbor
  double edge_margin = 1.0;    // mm inset of pass start/end from the part edge
  double clearance = 20.0;     // mm lift for transit moves between passes
  double baseline_step = 0.5;  // mm advance per record for the static baseline
  // Generated pieces vary their height along x, so that is the default scan
  // direction; the laser line then spans the part's width.
  Vec3 advance_axis = Vec3(1, 0, 0);
};

struct PassSpec {
  int id = 0;
  Vec3 start = Vec3::Zero();      // sensor position at the pass start
  Vec3 end_point = Vec3::Zero();  // plane point terminating the pass
  Vec3 advance = Vec3(0, 1, 0);   // unit advance direction, alternates
  double lateral_lo = 0;          // covered footprint interval
  double lateral_hi = 0;
};

struct BoustrophedonPlan {
  std::vector<PassSpec> passes;
  Vec3 advance_axis = Vec3(0, 1, 0);
  Vec3 lateral_axis = Vec3(1, 0, 0);
  double pass_width = 0;
  double stride = 0;
  double lateral_min = 0;
  double lateral_max = 0;
};

inline double auto_pass_width(const SensorSpec& s) {
  return 2.0 * s.working_distance * std::tan(deg2rad(s.fov_deg) * 0.5) * 0.8;
}

// Serpentine lateral coverage. Pass edges form the cumulative lattice
// lo_{k+1} = lo_k + stride with hi_k = lo_k + pass_width; since
// stride <= pass_width and both sums share the base, hi_k >= lo_{k+1} holds
// exactly in floating point and adjacent passes can never leave a gap.
// Pass starts are inset edge_margin from the part edge so the first profile
// always sees surface, and start heights put the sensor at W_d over it.
inline BoustrophedonPlan plan_boustrophedon(const MeshAccel& accel, const SensorSpec& sensor,
                                            const PlannerParams& params) {
  if (params.overlap < 0.0 || params.overlap >= 1.0) {
    throw ConfigError("planner: overlap must be in [0, 1)");
  }
  if (params.pass_width < 0.0) throw ConfigError("planner: pass_width must be positive");
  const Vec3 u = params.advance_axis.normalized();
  if (std::abs(u.z()) > 1e-9) throw ConfigError("planner: advance axis must be horizontal");
  const Vec3 ez(0, 0, 1);
  const Vec3 v = u.cross(ez).normalized();  // horizontal, perpendicular to the advance

  BoustrophedonPlan plan;
  plan.advance_axis = u;
  plan.lateral_axis = v;
  plan.pass_width = params.pass_width > 0 ? params.pass_width : auto_pass_width(sensor);
  plan.stride = plan.pass_width * (1.0 - params.overlap);

  const Aabb bb = accel.mesh().bounds();
  auto proj_interval = [&](const Vec3& dir, double& lo, double& hi) {
    lo = 0;
    hi = 0;
    for (int k = 0; k < 3; ++k) {
      lo += std::min(dir[k] * bb.lo[k], dir[k] * bb.hi[k]);
      hi += std::max(dir[k] * bb.lo[k], dir[k] * bb.hi[k]);
    }
  };
  double lat_min, lat_max, adv_min, adv_max;
  proj_interval(v, lat_min, lat_max);
  proj_interval(u, adv_min, adv_max);
  plan.lateral_min = lat_min;
  plan.lateral_max = lat_max;

  const double margin = std::min(params.edge_margin, 0.25 * (adv_max - adv_min));
  const double a0 = adv_min + margin;
  const double a1 = adv_max - margin;

  double lo = lat_min;
  for (int k = 0;; ++k) {
    PassSpec pass;
    pass.id = k;
    pass.lateral_lo = lo;
    pass.lateral_hi = lo + plan.pass_width;
    // center the sensor over the part of the cell that is actually on the
    // mesh; a cell wider than the remaining footprint would otherwise put
    // the pass line beside the part
    const double center = 0.5 * (std::max(lo, lat_min) + std::min(pass.lateral_hi, lat_max));
    const bool forward = (k % 2 == 0);
    pass.advance = forward ? u : Vec3(-u);
    const double a_start = forward ? a0 : a1;
    const double a_end = forward ? a1 : a0;

    const Vec3 ground = v * center + u * a_start;
    const Ray probe{Vec3(ground.x(), ground.y(), bb.hi.z() + 10.0), Vec3(0, 0, -1)};
    const auto hit = accel.raycast(probe);
    const double z_surf = hit ? hit->point.z() : bb.hi.z();
    pass.start = Vec3(ground.x(), ground.y(), z_surf + sensor.working_distance);
    pass.end_point = v * center + u * a_end;
    plan.passes.push_back(pass);

    if (pass.lateral_hi >= lat_max) break;
    lo += plan.stride;
  }
  return plan;
}

inline BoustrophedonPlan plan_boustrophedon(const TriangleMesh& mesh, const SensorSpec& sensor,
                                            const Vec3& advance_dir, double pass_width,
                                            double overlap) {
  PlannerParams p;
  p.advance_axis = advance_dir;
  p.pass_width = pass_width;
  p.overlap = overlap;
  return plan_boustrophedon(MeshAccel(mesh), sensor, p);
}

inline EpisodeSpec pass_episode(const PassSpec& pass, const EpisodeSpec& base) {
  EpisodeSpec ep = base;
  ep.start_pose = SensorPose::look(pass.start, pass.advance, Vec3(0, 0, -1));
  ep.advance_dir = pass.advance;
  ep.end_point = pass.end_point;
  ep.end_normal = pass.advance;
  return ep;
}

struct TrajectoryRecord {
  int idx = 0;
  int pass_id = 0;
  bool capture = true;
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  double theta_deg = 0;
  // In-memory only: the exact frame the record was produced with, so a
  // replay inside the same process is bit-identical. Files carry the
  // quaternion, whose reconstruction agrees to ~1e-15.
  std::optional<SensorPose> exact_pose;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  std::vector<Vec3> pass_advance;  // advance direction per pass id
  std::string mesh_digest;
  std::string config_digest;
  std::string mode;  // "rl" or "static"
  std::uint64_t seed = 0;
};

// Per-step scan state recorded while a pass is rolled out. NaN marks an
// invalid measurement.
struct StepTrace {
  std::vector<Vec3> position;
  std::vector<double> theta_deg;
  std::vector<double> d_mm, alpha_deg, ds_mm;
  std::vector<double> r_d, r_alpha, r_ds, total;
  std::vector<std::uint8_t> done;

  void push(const Vec3& pos, double theta, const std::optional<double>& d,
            const std::optional<double>& a, const std::optional<double>& ds,
            const RewardBreakdown& rb, bool is_done) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    position.push_back(pos);
    theta_deg.push_back(theta);
    d_mm.push_back(d.value_or(nan));
    alpha_deg.push_back(a.value_or(nan));
    ds_mm.push_back(ds.value_or(nan));
    r_d.push_back(rb.r_distance);
    r_alpha.push_back(rb.r_orientation);
    r_ds.push_back(rb.r_spacing);
    total.push_back(rb.total);
    done.push_back(is_done ? 1 : 0);
  }

  std::size_t size() const { return d_mm.size(); }
};

inline void save_trace_csv(const StepTrace& trace, const std::string& path,
                           const std::vector<std::string>& comments = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "step,px_mm,py_mm,pz_mm,theta_deg,d_mm,alpha_deg,ds_mm,r_d,r_alpha,r_ds,total,done\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << i << ',' << fmt_double(trace.position[i].x()) << ','
        << fmt_double(trace.position[i].y()) << ',' << fmt_double(trace.position[i].z()) << ','
        << fmt_double(trace.theta_deg[i]) << ',' << fmt_double(trace.d_mm[i]) << ','
        << fmt_double(trace.alpha_deg[i]) << ',' << fmt_double(trace.ds_mm[i]) << ','
        << fmt_double(trace.r_d[i]) << ',' << fmt_double(trace.r_alpha[i]) << ','
        << fmt_double(trace.r_ds[i]) << ',' << fmt_double(trace.total[i]) << ','
        << int(trace.done[i]) << '\n';
  }
  if (!out) throw Error("write failure: " + path);
}

struct PassRollout {
  std::vector<TrajectoryRecord> records;  // pass_id/idx filled during assembly
  StepTrace trace;
  Vec3 advance = Vec3(0, 1, 0);
  DoneReason reason = DoneReason::None;
};

namespace detail {

inline TrajectoryRecord pose_record(const SensorPose& pose, double theta_deg, bool capture) {
  TrajectoryRecord r;
  r.capture = capture;
  r.position = pose.position;
  r.orientation = pose.orientation();
  r.theta_deg = theta_deg;
  r.exact_pose = pose;
  return r;
}

}  // namespace detail

// Deterministic policy rollout over one pass: mean action, no exploration
// noise. The first record is the start pose itself.
inline PassRollout rollout_policy(const MeshAccel& accel, const SensorSpec& sensor,
                                  const MlpParams& params, const PassSpec& pass,
                                  const EpisodeSpec& base, std::uint64_t noise_seed) {
  PassRollout out;
  out.advance = pass.advance;
  ScanEnv env(&accel, sensor, pass_episode(pass, base), noise_seed);
  Eigen::VectorXd obs = env.reset();
  out.records.push_back(detail::pose_record(env.state().pose, env.state().theta_deg, true));
  out.trace.push(env.state().pose.position, env.state().theta_deg, env.state().d_mm,
                 env.state().alpha_deg, std::nullopt, RewardBreakdown{}, false);
  while (true) {
    const Eigen::VectorXd a = deterministic_action(params, obs);
    const auto res = env.step_normalized(Eigen::Vector3d(a[0], a[1], a[2]));
    out.records.push_back(detail::pose_record(env.state().pose, env.state().theta_deg, true));
    out.trace.push(env.state().pose.position, env.state().theta_deg, env.state().d_mm,
                   env.state().alpha_deg, env.state().ds_mm, res.breakdown, res.done);
    obs = res.obs;
    if (res.done) {
      out.reason = res.reason;
      break;
    }
  }
  return out;
}

// Fixed-height, fixed-orientation reference: advances in constant steps at
// the start stand-off and never reacts to the surface. Runs the full pass
// even through invalid measurements, like the straight paths it models.
inline PassRollout make_static_baseline(const MeshAccel& accel, const SensorSpec& sensor,
                                        const PassSpec& pass, const EpisodeSpec& base,
                                        double step_mm, std::uint64_t noise_seed) {
  if (step_mm <= 0) throw ConfigError("planner: baseline step must be positive");
  const EpisodeSpec episode = pass_episode(pass, base);
  PassRollout out;
  out.advance = pass.advance;
  SensorPose pose = episode.start_pose;
  std::uint64_t counter = 0;
  Profile prev = add_noise(simulate_profile(accel, pose, sensor), sensor, noise_seed, counter++);
  out.records.push_back(detail::pose_record(pose, 0.0, true));
  out.trace.push(pose.position, 0.0, mean_profile_distance(prev), direction_angle(prev),
                 std::nullopt, RewardBreakdown{}, false);
  for (int k = 0; k < episode.max_steps; ++k) {
    pose.position += step_mm * pose.y_axis;
    Profile cur = add_noise(simulate_profile(accel, pose, sensor), sensor, noise_seed, counter++);
    const auto d = mean_profile_distance(cur);
    const auto alpha = direction_angle(cur);
    const auto ds = profile_spacing(prev, cur, episode.advance_dir);
    const RewardBreakdown rb = reward_total(d, alpha, ds, sensor, episode.alpha_max,
                                            episode.ds_opt, episode.weights);
    prev = std::move(cur);
    const Vec3 probe = pose.position + sensor.working_distance * pose.laser_axis;
    const bool at_end = (probe - episode.end_point).dot(episode.end_normal) >= 0.0;
    out.records.push_back(detail::pose_record(pose, 0.0, true));
    out.trace.push(pose.position, 0.0, d, alpha, ds, rb, at_end);
    if (at_end) {
      out.reason = DoneReason::ReachedEnd;
      break;
    }
  }
  if (out.reason == DoneReason::None) out.reason = DoneReason::MaxSteps;
  return out;
}

// Concatenates pass rollouts into one executable trajectory with lifted
// transit moves between consecutive passes.
inline Trajectory assemble(const std::vector<PassRollout>& passes, double clearance) {
  Trajectory traj;
  int idx = 0;
  for (std::size_t k = 0; k < passes.size(); ++k) {
    if (passes[k].records.empty()) throw Error("assemble: empty pass rollout");
    traj.pass_advance.push_back(passes[k].advance);
    if (k > 0) {
      const TrajectoryRecord& prev_end = traj.records.back();
      const TrajectoryRecord& next_start = passes[k].records.front();
      const double z_t = std::max(prev_end.position.z(), next_start.position.z()) + clearance;
      TrajectoryRecord lift = prev_end;
      lift.capture = false;
      lift.pass_id = static_cast<int>(k);
      lift.position.z() = z_t;
      lift.exact_pose.reset();
      TrajectoryRecord shift = next_start;
      shift.capture = false;
      shift.pass_id = static_cast<int>(k);
      shift.position.z() = z_t;
      shift.exact_pose.reset();
      lift.idx = idx++;
      traj.records.push_back(lift);
      shift.idx = idx++;
      traj.records.push_back(shift);
    }
    for (TrajectoryRecord r : passes[k].records) {
      r.pass_id = static_cast<int>(k);
      r.idx = idx++;
      traj.records.push_back(r);
    }
  }
  return traj;
}

inline SensorPose record_pose(const TrajectoryRecord& r) {
  if (r.exact_pose) {
    SensorPose p = *r.exact_pose;
    p.position = r.position;
    return p;
  }
  const Mat3 m = r.orientation.toRotationMatrix();
  SensorPose p;
  p.position = r.position;
  p.x_axis = m.col(0);
  p.y_axis = m.col(1);
  p.laser_axis = m.col(2);
  return p;
}

enum class TrajectoryFormat { Auto, Csv, Json };

inline void export_trajectory(const Trajectory& traj, const std::string& path,
                              TrajectoryFormat format = TrajectoryFormat::Auto) {
  if (format == TrajectoryFormat::Auto) {
    format = path.size() >= 5 && path.substr(path.size() - 5) == ".json" ? TrajectoryFormat::Json
                                                                         : TrajectoryFormat::Csv;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  if (format == TrajectoryFormat::Csv) {
    out << "# format=scanrl-trajectory\n";
    out << "# mode=" << traj.mode << '\n';
    out << "# seed=" << traj.seed << '\n';
    out << "# mesh_digest=" << traj.mesh_digest << '\n';
    out << "# config_digest=" << traj.config_digest << '\n';
    for (const auto& a : traj.pass_advance) {
      out << "# pass_advance=" << fmt_double(a.x()) << ' ' << fmt_double(a.y()) << ' '
          << fmt_double(a.z()) << '\n';
    }
    out << "idx,pass_id,capture,x_mm,y_mm,z_mm,qw,qx,qy,qz,theta_deg\n";
    for (const auto& r : traj.records) {
      out << r.idx << ',' << r.pass_id << ',' << (r.capture ? 1 : 0) << ','
          << fmt_double(r.position.x()) << ',' << fmt_double(r.position.y()) << ','
          << fmt_double(r.position.z()) << ',' << fmt_double(r.orientation.w()) << ','
          << fmt_double(r.orientation.x()) << ',' << fmt_double(r.orientation.y()) << ','
          << fmt_double(r.orientation.z()) << ',' << fmt_double(r.theta_deg) << '\n';
    }
  } else {
    nlohmann::json j;
    j["format"] = "scanrl-trajectory";
    j["version"] = 1;
    j["mode"] = traj.mode;
    j["seed"] = traj.seed;
    j["mesh_digest"] = traj.mesh_digest;
    j["config_digest"] = traj.config_digest;
    nlohmann::json adv = nlohmann::json::array();
    for (const auto& a : traj.pass_advance) adv.push_back({a.x(), a.y(), a.z()});
    j["pass_advance"] = adv;
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : traj.records) {
      recs.push_back({{"idx", r.idx},
                      {"pass_id", r.pass_id},
                      {"capture", r.capture},
                      {"position", {r.position.x(), r.position.y(), r.position.z()}},
                      {"orientation", {r.orientation.w(), r.orientation.x(), r.orientation.y(),
                                       r.orientation.z()}},
                      {"theta_deg", r.theta_deg}});
    }
    j["records"] = recs;
    out << j.dump(2) << '\n';
  }
  if (!out) throw Error("write failure: " + path);
}

inline Trajectory load_trajectory(const std::string& path,
                                  TrajectoryFormat format = TrajectoryFormat::Auto) {
  if (format == TrajectoryFormat::Auto) {
    format = path.size() >= 5 && path.substr(path.size() - 5) == ".json" ? TrajectoryFormat::Json
                                                                         : TrajectoryFormat::Csv;
  }
  std::ifstream in(path);
  if (!in) throw Error("cannot open trajectory file: " + path);
  Trajectory traj;
  if (format == TrajectoryFormat::Csv) {
    std::string line;
    while (std::getline(in, line) && line.rfind("# ", 0) == 0) {
      const std::string kv = line.substr(2);
      const auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "mode") {
        traj.mode = val;
      } else if (key == "seed") {
        traj.seed = std::strtoull(val.c_str(), nullptr, 10);
      } else if (key == "mesh_digest") {
        traj.mesh_digest = val;
      } else if (key == "config_digest") {
        traj.config_digest = val;
      } else if (key == "pass_advance") {
        std::istringstream vs(val);
        Vec3 a;
        if (vs >> a.x() >> a.y() >> a.z()) traj.pass_advance.push_back(a);
      }
    }
    if (line.rfind("idx,pass_id,capture", 0) != 0) throw Error("trajectory csv: bad header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ls(line);
      TrajectoryRecord r;
      int capture = 0;
      double qw, qx, qy, qz;
      if (!(ls >> r.idx >> r.pass_id >> capture >> r.position.x() >> r.position.y() >>
            r.position.z() >> qw >> qx >> qy >> qz >> r.theta_deg)) {
        throw Error("trajectory csv: malformed row");
      }
      r.capture = capture != 0;
      r.orientation = Quat(qw, qx, qy, qz);
      traj.records.push_back(r);
    }
  } else {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("trajectory file is not valid JSON: " + std::string(e.what()));
    }
    if (j.value("format", "") != "scanrl-trajectory") throw Error("not a trajectory file: " + path);
    traj.mode = j.value("mode", "");
    traj.seed = j.value("seed", std::uint64_t{0});
    traj.mesh_digest = j.value("mesh_digest", "");
    traj.config_digest = j.value("config_digest", "");
    if (j.contains("pass_advance")) {
      for (const auto& ja : j["pass_advance"]) {
        traj.pass_advance.emplace_back(ja[0].get<double>(), ja[1].get<double>(),
                                       ja[2].get<double>());
      }
    }
    for (const auto& jr : j.at("records")) {
      TrajectoryRecord r;
      r.idx = jr.at("idx").get<int>();
      r.pass_id = jr.at("pass_id").get<int>();
      r.capture = jr.at("capture").get<bool>();
      const auto& p = jr.at("position");
      r.position = Vec3(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
      const auto& q = jr.at("orientation");
      r.orientation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                           q[3].get<double>());
      r.theta_deg = jr.at("theta_deg").get<double>();
      traj.records.push_back(r);
    }
  }
  return traj;
}

}  // namespace scanrl
