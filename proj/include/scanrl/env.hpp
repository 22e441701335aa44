#pragma once

#include <cstdint>
#include <optional>

#include "scanrl/sensor.hpp"

namespace scanrl {

inline double clip_scalar(double v, double lo, double hi) {
  if (lo > hi) throw Error("clip_scalar: empty interval");
  return std::min(std::max(v, lo), hi);
}

// One control step of the scan head: lateral advance, stand-off change and
// pitch change. dy in mm along the advance axis, dz in mm along the laser
// axis (positive moves toward the surface), dtheta in degrees of pitch.
struct ActionDelta {
  double dy = 0;
  double dz = 0;
  double dtheta = 0;
};

struct ActionBounds {
  double dy_max = 1.0;      // mm
  double dz_max = 1.0;      // mm
  double dtheta_max = 1.0;  // deg
};

// State-dependent action limitation. Advance is only rate-limited; height
// and pitch corrections are additionally restricted to the direction that
// reduces the current error, so a noisy policy cannot push the sensor
// further out of range. With an invalid measurement the symmetric clip
// applies, leaving the agent free to search.
inline ActionDelta dynamic_action_limit(const ActionDelta& a, std::optional<double> d_mm,
                                        std::optional<double> alpha_deg, double working_distance,
                                        const ActionBounds& b) {
  ActionDelta out;
  out.dy = clip_scalar(a.dy, -b.dy_max, b.dy_max);
  if (d_mm) {
    out.dz = (*d_mm - working_distance >= 0.0) ? clip_scalar(a.dz, 0.0, b.dz_max)
                                               : clip_scalar(a.dz, -b.dz_max, 0.0);
  } else {
    out.dz = clip_scalar(a.dz, -b.dz_max, b.dz_max);
  }
  if (alpha_deg) {
    out.dtheta = (*alpha_deg >= 0.0) ? clip_scalar(a.dtheta, 0.0, b.dtheta_max)
                                     : clip_scalar(a.dtheta, -b.dtheta_max, 0.0);
  } else {
    out.dtheta = clip_scalar(a.dtheta, -b.dtheta_max, b.dtheta_max);
  }
  return out;
}

// Quadratic penalties, each saturated at -1. A missing measurement scores
// the full penalty.
inline double reward_distance(std::optional<double> d_mm, double working_distance,
                              double z_range) {
  if (!d_mm) return -1.0;
  const double e = (working_distance - *d_mm) / (0.5 * z_range);
  return std::max(-1.0, -(e * e));
}

inline double reward_orientation(std::optional<double> alpha_deg, double alpha_max_deg) {
  if (!alpha_deg) return -1.0;
  const double e = *alpha_deg / alpha_max_deg;
  return std::max(-1.0, -(e * e));
}

inline double reward_spacing(std::optional<double> ds_mm, double ds_opt_mm) {
  if (!ds_mm) return -1.0;
  const double e = (*ds_mm - ds_opt_mm) / ds_opt_mm;
  return std::max(-1.0, -(e * e));
}

struct RewardWeights {
  double distance = 1.0 / 3.0;
  double orientation = 1.0 / 3.0;
  double spacing = 1.0 / 3.0;
};

struct RewardBreakdown {
  double r_distance = 0;
  double r_orientation = 0;
  double r_spacing = 0;
  double total = 0;
};

inline RewardBreakdown reward_total(std::optional<double> d_mm, std::optional<double> alpha_deg,
                                    std::optional<double> ds_mm, const SensorSpec& spec,
                                    double alpha_max_deg, double ds_opt_mm,
                                    const RewardWeights& w) {
  RewardBreakdown r;
  r.r_distance = reward_distance(d_mm, spec.working_distance, spec.z_range);
  r.r_orientation = reward_orientation(alpha_deg, alpha_max_deg);
  r.r_spacing = reward_spacing(ds_mm, ds_opt_mm);
  r.total = w.distance * r.r_distance + w.orientation * r.r_orientation + w.spacing * r.r_spacing;
  return r;
}

// One straight inspection pass: the sensor starts at start_pose and is done
// once the profile centroid crosses the plane through end_point with normal
// end_normal (normally the advance direction).
struct EpisodeSpec {
  SensorPose start_pose;
  Vec3 advance_dir = Vec3(0, 1, 0);  // unit, used for the signed spacing
  Vec3 end_point = Vec3::Zero();
  Vec3 end_normal = Vec3(0, 1, 0);
  double ds_opt = 0.5;        // mm, target profile spacing
  double alpha_max = 30.0;    // deg, orientation tolerance
  RewardWeights weights;
  ActionBounds bounds;
  int max_steps = 1200;
  int patience = 25;          // consecutive empty profiles before aborting
  double theta_min = -45.0;   // deg, mechanical pitch limits
  double theta_max = 45.0;
  double length_scale = 0.0;  // mm, 0 = derive from start/end
};

enum class DoneReason { None, ReachedEnd, MaxSteps, LostSurface };

struct EnvState {
  SensorPose pose;
  double theta_deg = 0;
  std::optional<double> d_mm;
  std::optional<double> alpha_deg;
  std::optional<double> ds_mm;
};

inline ActionDelta dynamic_action_limit(const EnvState& state, const ActionDelta& raw,
                                        const ActionBounds& bounds, double working_distance) {
  return dynamic_action_limit(raw, state.d_mm, state.alpha_deg, working_distance, bounds);
}

inline RewardBreakdown reward_total(const EnvState& state, const SensorSpec& spec,
                                    const EpisodeSpec& episode) {
  return reward_total(state.d_mm, state.alpha_deg, state.ds_mm, spec, episode.alpha_max,
                      episode.ds_opt, episode.weights);
}

class ScanEnv {
 public:
  static constexpr int kObsDim = 8;

  ScanEnv(const MeshAccel* accel, SensorSpec sensor, EpisodeSpec episode,
          std::uint64_t noise_seed)
      : accel_(accel), sensor_(sensor), episode_(episode), noise_seed_(noise_seed) {
    if (!accel_) throw Error("env: null accelerator");
    length_scale_ = episode_.length_scale > 0.0
                        ? episode_.length_scale
                        : std::max(1.0, (episode_.end_point - episode_.start_pose.position)
                                            .dot(episode_.end_normal));
    theta_scale_ = std::max({std::abs(episode_.theta_min), std::abs(episode_.theta_max), 1.0});
  }

  Eigen::VectorXd reset() {
    state_.pose = episode_.start_pose;
    state_.theta_deg = 0;
    steps_ = 0;
    invalid_streak_ = 0;
    done_reason_ = DoneReason::None;
    profile_ = capture();
    if (profile_.valid_count() == 0) {
      throw Error("env: no surface visible at the episode start pose");
    }
    state_.d_mm = mean_profile_distance(profile_);
    state_.alpha_deg = direction_angle(profile_);
    state_.ds_mm = episode_.ds_opt;  // no previous profile yet
    return observe();
  }

  struct StepResult {
    Eigen::VectorXd obs;
    double reward = 0;
    bool done = false;
    RewardBreakdown breakdown;
    ActionDelta applied;
    DoneReason reason = DoneReason::None;
  };

  StepResult step(const ActionDelta& action) {
    if (done_reason_ != DoneReason::None) throw Error("env: step after episode end");
    StepResult res;
    res.applied = dynamic_action_limit(action, state_.d_mm, state_.alpha_deg,
                                       sensor_.working_distance, episode_.bounds);

    state_.pose.position +=
        res.applied.dy * state_.pose.y_axis + res.applied.dz * state_.pose.laser_axis;
    const double theta_new =
        clip_scalar(state_.theta_deg + res.applied.dtheta, episode_.theta_min, episode_.theta_max);
    const double applied_dtheta = theta_new - state_.theta_deg;
    if (applied_dtheta != 0.0) {
      state_.pose = state_.pose.pitched(applied_dtheta);
      state_.theta_deg = theta_new;
    }
    res.applied.dtheta = applied_dtheta;

    Profile prev = std::move(profile_);
    profile_ = capture();
    state_.d_mm = mean_profile_distance(profile_);
    state_.alpha_deg = direction_angle(profile_);
    state_.ds_mm = profile_spacing(prev, profile_, episode_.advance_dir);

    res.breakdown = reward_total(state_, sensor_, episode_);
    res.reward = res.breakdown.total;

    ++steps_;
    invalid_streak_ = (profile_.valid_count() == 0) ? invalid_streak_ + 1 : 0;
    const auto probe = profile_.centroid();
    if (probe && (*probe - episode_.end_point).dot(episode_.end_normal) >= 0.0) {
      done_reason_ = DoneReason::ReachedEnd;
    } else if (invalid_streak_ >= episode_.patience) {
      done_reason_ = DoneReason::LostSurface;
    } else if (steps_ >= episode_.max_steps) {
      done_reason_ = DoneReason::MaxSteps;
    }
    res.done = done_reason_ != DoneReason::None;
    res.reason = done_reason_;
    res.obs = observe();
    return res;
  }

  // Action in [-1,1]^3 scaled onto the action bounds.
  StepResult step_normalized(const Eigen::Vector3d& a) {
    return step(ActionDelta{a.x() * episode_.bounds.dy_max, a.y() * episode_.bounds.dz_max,
                            a.z() * episode_.bounds.dtheta_max});
  }

  Eigen::VectorXd observe() const {
    const SensorPose& p0 = episode_.start_pose;
    const Vec3 rel = state_.pose.position - p0.position;
    Eigen::VectorXd o(kObsDim);
    o[0] = rel.dot(p0.x_axis) / length_scale_;
    o[1] = rel.dot(p0.y_axis) / length_scale_;
    o[2] = rel.dot(-p0.laser_axis) / length_scale_;
    o[3] = state_.theta_deg / theta_scale_;
    o[4] = state_.d_mm ? (*state_.d_mm - sensor_.working_distance) / (0.5 * sensor_.z_range) : -1.0;
    o[5] = state_.alpha_deg ? *state_.alpha_deg / episode_.alpha_max : -1.0;
    o[6] = state_.ds_mm ? *state_.ds_mm / episode_.ds_opt - 1.0 : -1.0;
    o[7] = (state_.d_mm && state_.alpha_deg) ? 1.0 : 0.0;
    for (int i = 0; i < kObsDim; ++i) o[i] = clip_scalar(o[i], -5.0, 5.0);
    return o;
  }

  const EnvState& state() const { return state_; }
  const Profile& last_profile() const { return profile_; }
  const EpisodeSpec& episode() const { return episode_; }
  const SensorSpec& sensor() const { return sensor_; }
  int steps() const { return steps_; }
  DoneReason done_reason() const { return done_reason_; }

 private:
  Profile capture() {
    return add_noise(simulate_profile(*accel_, state_.pose, sensor_), sensor_, noise_seed_,
                     profile_counter_++);
  }

  const MeshAccel* accel_;
  SensorSpec sensor_;
  EpisodeSpec episode_;
  std::uint64_t noise_seed_;
  std::uint64_t profile_counter_ = 0;
  EnvState state_;
  Profile profile_;
  int steps_ = 0;
  int invalid_streak_ = 0;
  DoneReason done_reason_ = DoneReason::None;
  double length_scale_ = 1.0;
  double theta_scale_ = 45.0;
};

// Start-state randomization for training: offset along the laser axis, an
// initial pitch error the agent has to work off, and a forward shift along
// the pass so episodes begin over varied features instead of always at the
// pass head.
struct StartJitter {
  double height_mm = 0;
  double pitch_deg = 0;
  double advance_mm = 0;
};

// Episode source over a set of scan passes. Training mode picks a random
// pass and jitters the start state; evaluation mode cycles the passes in
// order from their nominal start poses.
class MultiPassEnv {
 public:
  MultiPassEnv(const MeshAccel* accel, SensorSpec sensor, std::vector<EpisodeSpec> passes,
               StartJitter jitter, std::uint64_t seed, bool randomize)
      : accel_(accel), sensor_(sensor), passes_(std::move(passes)), jitter_(jitter),
        seed_(seed), randomize_(randomize), rng_(mix_seed(seed, 0x70617373)) {
    if (passes_.empty()) throw Error("env: no passes to train on");
  }

  Eigen::VectorXd reset() {
    for (int attempt = 0;; ++attempt) {
      const double shrink = attempt == 0 ? 1.0 : (attempt == 1 ? 0.5 : 0.0);
      const std::size_t idx = randomize_ ? static_cast<std::size_t>(rng_.below(passes_.size()))
                                         : (next_pass_++ % passes_.size());
      EpisodeSpec ep = passes_[idx];
      if (randomize_ && shrink > 0.0) {
        const double dz = rng_.uniform(-jitter_.height_mm, jitter_.height_mm) * shrink;
        const double dpitch = rng_.uniform(-jitter_.pitch_deg, jitter_.pitch_deg) * shrink;
        ep.start_pose.position -= dz * ep.start_pose.laser_axis;
        if (dpitch != 0.0) ep.start_pose = ep.start_pose.pitched(dpitch);
        if (jitter_.advance_mm > 0.0) {
          // keep at least a fifth of the pass ahead of the jittered start
          const double avail =
              (ep.end_point - ep.start_pose.position).dot(ep.advance_dir);
          const double cap = std::min(jitter_.advance_mm, 0.8 * avail);
          if (cap > 0.0) {
            ep.start_pose.position += rng_.uniform(0.0, cap) * shrink * ep.advance_dir;
          }
        }
      }
      env_.emplace(accel_, sensor_, ep, mix_seed(seed_, 0x6e6f6973, episode_counter_++));
      try {
        return env_->reset();
      } catch (const Error&) {
        if (attempt >= 2) throw;
      }
    }
  }

  ScanEnv::StepResult step_normalized(const Eigen::Vector3d& a) {
    if (!env_) throw Error("env: step before reset");
    return env_->step_normalized(a);
  }

  const ScanEnv& inner() const {
    if (!env_) throw Error("env: no active episode");
    return *env_;
  }

 private:
  const MeshAccel* accel_;
  SensorSpec sensor_;
  std::vector<EpisodeSpec> passes_;
  StartJitter jitter_;
  std::uint64_t seed_;
  bool randomize_;
  Rng rng_;
  std::optional<ScanEnv> env_;
  std::size_t next_pass_ = 0;
  std::uint64_t episode_counter_ = 0;
};

}  // namespace scanrl
