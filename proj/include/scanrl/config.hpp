#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <json.hpp>
#include <string>

#include "scanrl/digest.hpp"
#include "scanrl/env.hpp"
#include "scanrl/planner.hpp"
#include "scanrl/ppo.hpp"

namespace scanrl {

// Where the scanned part comes from: either a mesh file or one of the
// built-in generators.
struct MeshSource {
  std::string path;                    // non-empty wins over the generator
  MeshFormat format = MeshFormat::Auto;
  double scale = 1.0;
  std::string generate = "training";   // training | wavy | plate
  double length_mm = 300.0;
  double width_mm = 80.0;
  double height_mm = 30.0;
  std::uint64_t seed = 1;
};

struct RenderLimits {
  double distance_mm = 0;      // 0 = half the sensor z range
  double orientation_deg = 0;  // 0 = alpha_max
};

struct RunConfig {
  MeshSource mesh;
  SensorSpec sensor;
  double ds_opt = 0.5;
  double alpha_max = 30.0;
  RewardWeights weights;
  ActionBounds bounds;
  int max_steps = 1200;
  int patience = 25;
  double theta_min = -45.0;
  double theta_max = 45.0;
  StartJitter jitter{15.0, 12.0, 300.0};
  PpoConfig ppo;
  PlannerParams planner;
  RenderLimits render;
  std::string out_dir;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = all available cores

  // Episode shaping shared by every pass; the planner fills the pose and
  // end plane per pass.
  EpisodeSpec episode_defaults() const {
    EpisodeSpec ep;
    ep.ds_opt = ds_opt;
    ep.alpha_max = alpha_max;
    ep.weights = weights;
    ep.bounds = bounds;
    ep.max_steps = max_steps;
    ep.patience = patience;
    ep.theta_min = theta_min;
    ep.theta_max = theta_max;
    return ep;
  }

  double render_distance_limit() const {
    return render.distance_mm > 0 ? render.distance_mm : 0.5 * sensor.z_range;
  }
  double render_orientation_limit() const {
    return render.orientation_deg > 0 ? render.orientation_deg : alpha_max;
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const char* section,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string("config: ") + section + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("config: unknown key '" + it.key() + "' in section " + section);
    }
  }
}

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config: bad value for key '") + key + "'");
  }
}

inline void read_vec3(const nlohmann::json& j, const char* key, Vec3& out) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) {
    throw ConfigError(std::string("config: '") + key + "' must be an array of 3 numbers");
  }
  out = Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

inline MeshFormat parse_mesh_format(const std::string& s) {
  if (s == "auto") return MeshFormat::Auto;
  if (s == "stl") return MeshFormat::StlBinary;
  if (s == "stl_ascii") return MeshFormat::StlAscii;
  if (s == "obj") return MeshFormat::Obj;
  if (s == "ply") return MeshFormat::Ply;
  if (s == "ply_ascii") return MeshFormat::PlyAscii;
  if (s == "ply_binary") return MeshFormat::PlyBinary;
  throw ConfigError("config: unknown mesh format '" + s + "'");
}

inline std::string mesh_format_name(MeshFormat f) {
  switch (f) {
    case MeshFormat::StlBinary: return "stl";
    case MeshFormat::StlAscii: return "stl_ascii";
    case MeshFormat::Obj: return "obj";
    case MeshFormat::Ply: return "ply";
    case MeshFormat::PlyAscii: return "ply_ascii";
    case MeshFormat::PlyBinary: return "ply_binary";
    default: return "auto";
  }
}

}  // namespace detail

inline void validate_config(const RunConfig& c) {
  if (!c.mesh.path.empty() && !std::filesystem::exists(c.mesh.path)) {
    throw ConfigError("config: mesh.path does not exist: " + c.mesh.path);
  }
  if (c.mesh.path.empty() && c.mesh.generate != "training" && c.mesh.generate != "wavy" &&
      c.mesh.generate != "plate") {
    throw ConfigError("config: mesh.generate must be training, wavy or plate");
  }
  if (c.mesh.scale <= 0) throw ConfigError("config: mesh.scale must be positive");
  if (c.mesh.length_mm <= 0 || c.mesh.width_mm <= 0 || c.mesh.height_mm <= 0) {
    throw ConfigError("config: mesh dimensions must be positive");
  }
  if (c.sensor.working_distance <= 0) throw ConfigError("config: sensor.working_distance_mm");
  if (c.sensor.z_range <= 0 || c.sensor.z_range >= 2.0 * c.sensor.working_distance) {
    throw ConfigError("config: sensor.z_range_mm must be in (0, 2 working_distance)");
  }
  if (c.sensor.fov_deg <= 0 || c.sensor.fov_deg >= 180) {
    throw ConfigError("config: sensor.fov_deg must be in (0, 180)");
  }
  if (c.sensor.points_per_profile < 2) {
    throw ConfigError("config: sensor.points_per_profile must be at least 2");
  }
  if (c.sensor.noise_sigma_z < 0 || c.sensor.speckle_strength < 0) {
    throw ConfigError("config: sensor noise parameters must be non-negative");
  }
  if (c.ds_opt <= 0) throw ConfigError("config: episode.ds_opt_mm must be positive");
  if (c.alpha_max <= 0) throw ConfigError("config: episode.alpha_max_deg must be positive");
  const double wsum = c.weights.distance + c.weights.orientation + c.weights.spacing;
  if (c.weights.distance < 0 || c.weights.orientation < 0 || c.weights.spacing < 0 ||
      std::abs(wsum - 1.0) > 1e-9) {
    throw ConfigError("config: episode.weights must be non-negative and sum to 1");
  }
  if (c.bounds.dy_max <= 0 || c.bounds.dz_max <= 0 || c.bounds.dtheta_max <= 0) {
    throw ConfigError("config: episode.action_bounds must be positive");
  }
  if (c.max_steps <= 0 || c.patience <= 0) {
    throw ConfigError("config: episode.max_steps and episode.patience must be positive");
  }
  if (c.theta_min >= c.theta_max) throw ConfigError("config: episode.theta limits are inverted");
  if (c.jitter.height_mm < 0 || c.jitter.pitch_deg < 0 || c.jitter.advance_mm < 0) {
    throw ConfigError("config: jitter values must be non-negative");
  }
  if (c.ppo.gamma < 0 || c.ppo.gamma > 1 || c.ppo.gae_lambda < 0 || c.ppo.gae_lambda > 1) {
    throw ConfigError("config: ppo.gamma and ppo.gae_lambda must be in [0, 1]");
  }
  if (c.ppo.clip_epsilon <= 0) throw ConfigError("config: ppo.clip_epsilon must be positive");
  if (c.ppo.learning_rate <= 0) throw ConfigError("config: ppo.learning_rate must be positive");
  if (c.ppo.rollout_steps <= 0 || c.ppo.minibatch_size <= 0 ||
      c.ppo.rollout_steps % c.ppo.minibatch_size != 0) {
    throw ConfigError("config: ppo.rollout_steps must be a positive multiple of minibatch_size");
  }
  if (c.ppo.epochs <= 0) throw ConfigError("config: ppo.epochs must be positive");
  if (c.ppo.total_steps <= 0) throw ConfigError("config: ppo.total_steps must be positive");
  if (c.ppo.eval_episodes <= 0) throw ConfigError("config: ppo.eval_episodes must be positive");
  if (c.ppo.dims.n_in != ScanEnv::kObsDim || c.ppo.dims.n_act != 3) {
    throw ConfigError("config: ppo network must map the 8-d observation to 3 actions");
  }
  if (c.ppo.dims.h1 <= 0 || c.ppo.dims.h2 <= 0) {
    throw ConfigError("config: ppo hidden sizes must be positive");
  }
  if (c.planner.overlap < 0 || c.planner.overlap >= 1) {
    throw ConfigError("config: planner.overlap must be in [0, 1)");
  }
  if (c.planner.pass_width < 0) throw ConfigError("config: planner.pass_width_mm");
  if (c.planner.edge_margin < 0) throw ConfigError("config: planner.edge_margin_mm");
  if (c.planner.clearance < 0) throw ConfigError("config: planner.clearance_mm");
  if (c.planner.baseline_step <= 0) throw ConfigError("config: planner.baseline_step_mm");
  if (std::abs(c.planner.advance_axis.z()) > 1e-9 || c.planner.advance_axis.norm() < 1e-12) {
    throw ConfigError("config: planner.advance_axis must be a horizontal direction");
  }
  if (c.render.distance_mm < 0 || c.render.orientation_deg < 0) {
    throw ConfigError("config: render limits must be non-negative");
  }
  if (c.threads < 0) throw ConfigError("config: threads must be non-negative");
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j, "root",
                     {"mesh", "sensor", "episode", "jitter", "ppo", "planner", "render",
                      "out_dir", "seed", "threads"});
  if (j.contains("mesh")) {
    const auto& m = j.at("mesh");
    detail::check_keys(m, "mesh", {"path", "format", "scale", "generate", "length_mm",
                                   "width_mm", "height_mm", "seed"});
    detail::read_key(m, "path", c.mesh.path);
    std::string fmt = "auto";
    detail::read_key(m, "format", fmt);
    c.mesh.format = detail::parse_mesh_format(fmt);
    detail::read_key(m, "scale", c.mesh.scale);
    detail::read_key(m, "generate", c.mesh.generate);
    detail::read_key(m, "length_mm", c.mesh.length_mm);
    detail::read_key(m, "width_mm", c.mesh.width_mm);
    detail::read_key(m, "height_mm", c.mesh.height_mm);
    detail::read_key(m, "seed", c.mesh.seed);
  }
  if (j.contains("sensor")) {
    const auto& s = j.at("sensor");
    detail::check_keys(s, "sensor",
                       {"working_distance_mm", "z_range_mm", "fov_deg", "points_per_profile",
                        "z_resolution_um", "noise_sigma_z_mm", "speckle_strength"});
    detail::read_key(s, "working_distance_mm", c.sensor.working_distance);
    detail::read_key(s, "z_range_mm", c.sensor.z_range);
    detail::read_key(s, "fov_deg", c.sensor.fov_deg);
    detail::read_key(s, "points_per_profile", c.sensor.points_per_profile);
    detail::read_key(s, "z_resolution_um", c.sensor.z_resolution_um);
    detail::read_key(s, "noise_sigma_z_mm", c.sensor.noise_sigma_z);
    detail::read_key(s, "speckle_strength", c.sensor.speckle_strength);
  }
  if (j.contains("episode")) {
    const auto& e = j.at("episode");
    detail::check_keys(e, "episode",
                       {"ds_opt_mm", "alpha_max_deg", "weights", "action_bounds", "max_steps",
                        "patience", "theta_min_deg", "theta_max_deg"});
    detail::read_key(e, "ds_opt_mm", c.ds_opt);
    detail::read_key(e, "alpha_max_deg", c.alpha_max);
    if (e.contains("weights")) {
      const auto& w = e.at("weights");
      detail::check_keys(w, "episode.weights", {"distance", "orientation", "spacing"});
      detail::read_key(w, "distance", c.weights.distance);
      detail::read_key(w, "orientation", c.weights.orientation);
      detail::read_key(w, "spacing", c.weights.spacing);
    }
    if (e.contains("action_bounds")) {
      const auto& b = e.at("action_bounds");
      detail::check_keys(b, "episode.action_bounds", {"dy_mm", "dz_mm", "dtheta_deg"});
      detail::read_key(b, "dy_mm", c.bounds.dy_max);
      detail::read_key(b, "dz_mm", c.bounds.dz_max);
      detail::read_key(b, "dtheta_deg", c.bounds.dtheta_max);
    }
    detail::read_key(e, "max_steps", c.max_steps);
    detail::read_key(e, "patience", c.patience);
    detail::read_key(e, "theta_min_deg", c.theta_min);
    detail::read_key(e, "theta_max_deg", c.theta_max);
  }
  if (j.contains("jitter")) {
    const auto& jt = j.at("jitter");
    detail::check_keys(jt, "jitter", {"height_mm", "pitch_deg", "advance_mm"});
    detail::read_key(jt, "height_mm", c.jitter.height_mm);
    detail::read_key(jt, "pitch_deg", c.jitter.pitch_deg);
    detail::read_key(jt, "advance_mm", c.jitter.advance_mm);
  }
  if (j.contains("ppo")) {
    const auto& p = j.at("ppo");
    detail::check_keys(p, "ppo",
                       {"gamma", "gae_lambda", "clip_epsilon", "learning_rate", "rollout_steps",
                        "minibatch_size", "epochs", "value_coef", "entropy_coef",
                        "max_grad_norm", "total_steps", "eval_episodes", "hidden1", "hidden2"});
    detail::read_key(p, "gamma", c.ppo.gamma);
    detail::read_key(p, "gae_lambda", c.ppo.gae_lambda);
    detail::read_key(p, "clip_epsilon", c.ppo.clip_epsilon);
    detail::read_key(p, "learning_rate", c.ppo.learning_rate);
    detail::read_key(p, "rollout_steps", c.ppo.rollout_steps);
    detail::read_key(p, "minibatch_size", c.ppo.minibatch_size);
    detail::read_key(p, "epochs", c.ppo.epochs);
    detail::read_key(p, "value_coef", c.ppo.value_coef);
    detail::read_key(p, "entropy_coef", c.ppo.entropy_coef);
    detail::read_key(p, "max_grad_norm", c.ppo.max_grad_norm);
    detail::read_key(p, "total_steps", c.ppo.total_steps);
    detail::read_key(p, "eval_episodes", c.ppo.eval_episodes);
    detail::read_key(p, "hidden1", c.ppo.dims.h1);
    detail::read_key(p, "hidden2", c.ppo.dims.h2);
  }
  if (j.contains("planner")) {
    const auto& p = j.at("planner");
    detail::check_keys(p, "planner",
                       {"pass_width_mm", "overlap", "edge_margin_mm", "clearance_mm",
                        "baseline_step_mm", "advance_axis"});
    detail::read_key(p, "pass_width_mm", c.planner.pass_width);
    detail::read_key(p, "overlap", c.planner.overlap);
    detail::read_key(p, "edge_margin_mm", c.planner.edge_margin);
    detail::read_key(p, "clearance_mm", c.planner.clearance);
    detail::read_key(p, "baseline_step_mm", c.planner.baseline_step);
    detail::read_vec3(p, "advance_axis", c.planner.advance_axis);
  }
  if (j.contains("render")) {
    const auto& r = j.at("render");
    detail::check_keys(r, "render", {"distance_limit_mm", "orientation_limit_deg"});
    detail::read_key(r, "distance_limit_mm", c.render.distance_mm);
    detail::read_key(r, "orientation_limit_deg", c.render.orientation_deg);
  }
  detail::read_key(j, "out_dir", c.out_dir);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "threads", c.threads);
  c.ppo.seed = c.seed;
  validate_config(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

// Canonical form: every field spelled out, keys sorted by the JSON library.
inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["mesh"] = {{"path", c.mesh.path},
               {"format", detail::mesh_format_name(c.mesh.format)},
               {"scale", c.mesh.scale},
               {"generate", c.mesh.generate},
               {"length_mm", c.mesh.length_mm},
               {"width_mm", c.mesh.width_mm},
               {"height_mm", c.mesh.height_mm},
               {"seed", c.mesh.seed}};
  j["sensor"] = {{"working_distance_mm", c.sensor.working_distance},
                 {"z_range_mm", c.sensor.z_range},
                 {"fov_deg", c.sensor.fov_deg},
                 {"points_per_profile", c.sensor.points_per_profile},
                 {"z_resolution_um", c.sensor.z_resolution_um},
                 {"noise_sigma_z_mm", c.sensor.noise_sigma_z},
                 {"speckle_strength", c.sensor.speckle_strength}};
  j["episode"] = {{"ds_opt_mm", c.ds_opt},
                  {"alpha_max_deg", c.alpha_max},
                  {"weights",
                   {{"distance", c.weights.distance},
                    {"orientation", c.weights.orientation},
                    {"spacing", c.weights.spacing}}},
                  {"action_bounds",
                   {{"dy_mm", c.bounds.dy_max},
                    {"dz_mm", c.bounds.dz_max},
                    {"dtheta_deg", c.bounds.dtheta_max}}},
                  {"max_steps", c.max_steps},
                  {"patience", c.patience},
                  {"theta_min_deg", c.theta_min},
                  {"theta_max_deg", c.theta_max}};
  j["jitter"] = {{"height_mm", c.jitter.height_mm},
                 {"pitch_deg", c.jitter.pitch_deg},
                 {"advance_mm", c.jitter.advance_mm}};
  j["ppo"] = {{"gamma", c.ppo.gamma},
              {"gae_lambda", c.ppo.gae_lambda},
              {"clip_epsilon", c.ppo.clip_epsilon},
              {"learning_rate", c.ppo.learning_rate},
              {"rollout_steps", c.ppo.rollout_steps},
              {"minibatch_size", c.ppo.minibatch_size},
              {"epochs", c.ppo.epochs},
              {"value_coef", c.ppo.value_coef},
              {"entropy_coef", c.ppo.entropy_coef},
              {"max_grad_norm", c.ppo.max_grad_norm},
              {"total_steps", c.ppo.total_steps},
              {"eval_episodes", c.ppo.eval_episodes},
              {"hidden1", c.ppo.dims.h1},
              {"hidden2", c.ppo.dims.h2}};
  j["planner"] = {{"pass_width_mm", c.planner.pass_width},
                  {"overlap", c.planner.overlap},
                  {"edge_margin_mm", c.planner.edge_margin},
                  {"clearance_mm", c.planner.clearance},
                  {"baseline_step_mm", c.planner.baseline_step},
                  {"advance_axis",
                   {c.planner.advance_axis.x(), c.planner.advance_axis.y(),
                    c.planner.advance_axis.z()}}};
  j["render"] = {{"distance_limit_mm", c.render.distance_mm},
                 {"orientation_limit_deg", c.render.orientation_deg}};
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

// Digest of the full effective configuration (seed included), stamped into
// every artifact for provenance checks.
inline std::string config_digest(const RunConfig& c) {
  return digest_hex(config_to_json(c).dump());
}

// Digest of only the decision problem a policy was trained for: sensor
// geometry, episode shaping and network shape. Two configs with the same
// mdp digest produce interchangeable policies.
inline std::string mdp_digest(const RunConfig& c) {
  Digest d;
  d.update_pod(c.sensor.working_distance);
  d.update_pod(c.sensor.z_range);
  d.update_pod(c.sensor.fov_deg);
  d.update_pod(c.sensor.points_per_profile);
  d.update_pod(c.sensor.noise_sigma_z);
  d.update_pod(c.sensor.speckle_strength);
  d.update_pod(c.ds_opt);
  d.update_pod(c.alpha_max);
  d.update_pod(c.weights.distance);
  d.update_pod(c.weights.orientation);
  d.update_pod(c.weights.spacing);
  d.update_pod(c.bounds.dy_max);
  d.update_pod(c.bounds.dz_max);
  d.update_pod(c.bounds.dtheta_max);
  d.update_pod(c.max_steps);
  d.update_pod(c.patience);
  d.update_pod(c.theta_min);
  d.update_pod(c.theta_max);
  d.update_pod(c.ppo.dims.n_in);
  d.update_pod(c.ppo.dims.h1);
  d.update_pod(c.ppo.dims.h2);
  d.update_pod(c.ppo.dims.n_act);
  return d.hex();
}

inline TriangleMesh realize_mesh(const MeshSource& m) {
  if (!m.path.empty()) return load_mesh(m.path, m.format, m.scale);
  if (m.generate == "training") {
    return make_training_piece(m.length_mm, m.width_mm, m.height_mm, m.seed);
  }
  if (m.generate == "wavy") return make_wavy_piece(m.length_mm, m.width_mm, m.height_mm, m.seed);
  if (m.generate == "plate") return make_plate(m.length_mm, m.width_mm);
  throw ConfigError("config: unknown mesh generator '" + m.generate + "'");
}

// Output directory precedence: --out-dir flag, then config out_dir, then
// the SCANRL_OUT_ROOT environment variable, then the working directory.
// A relative config path is anchored at SCANRL_OUT_ROOT when that is set.
inline std::filesystem::path resolve_out_dir(const std::string& cli_value, const RunConfig& cfg,
                                             const std::string& default_leaf) {
  if (!cli_value.empty()) return cli_value;
  const char* root = std::getenv("SCANRL_OUT_ROOT");
  if (!cfg.out_dir.empty()) {
    std::filesystem::path p(cfg.out_dir);
    if (p.is_relative() && root && *root) return std::filesystem::path(root) / p;
    return p;
  }
  if (root && *root) return std::filesystem::path(root) / default_leaf;
  return std::filesystem::path(default_leaf);
}

}  // namespace scanrl
