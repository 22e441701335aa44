#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <vector>

#include "scanrl/bvh.hpp"
#include "scanrl/geometry.hpp"
#include "scanrl/parallel.hpp"
#include "scanrl/rng.hpp"

namespace scanrl {

// Laser triangulation profilometer parameters. Distances in mm, angles in
// degrees. Default values follow the unit used on the real cell.
struct SensorSpec {
  double working_distance = 400.0;  // nominal stand-off W_d
  double z_range = 250.0;           // measurable band Z_r centered on W_d
  double fov_deg = 63.5;            // fan aperture
  int points_per_profile = 4096;
  double z_resolution_um = 3.8;
  double noise_sigma_z = 0.0038;    // additive sigma, mm
  double speckle_strength = 0.01;   // multiplicative uniform half-width

  double z_min() const { return working_distance - 0.5 * z_range; }
  double z_max() const { return working_distance + 0.5 * z_range; }
};

// Sensor frame: laser_axis points from the emitter toward the surface,
// y_axis is the advance direction, x_axis spans the fan. The triple is
// right-handed with x cross y == laser_axis.
struct SensorPose {
  Vec3 position = Vec3::Zero();
  Vec3 x_axis = Vec3(-1, 0, 0);
  Vec3 y_axis = Vec3(0, 1, 0);
  Vec3 laser_axis = Vec3(0, 0, -1);

  static SensorPose look(const Vec3& position, const Vec3& advance, const Vec3& laser) {
    SensorPose p;
    p.position = position;
    p.laser_axis = laser.normalized();
    Vec3 y = advance - advance.dot(p.laser_axis) * p.laser_axis;
    if (y.norm() < 1e-12) throw Error("sensor pose: advance parallel to laser axis");
    p.y_axis = y.normalized();
    p.x_axis = p.y_axis.cross(p.laser_axis);
    return p;
  }

  Quat orientation() const { return frame_to_quat(x_axis, y_axis, laser_axis); }

  // Rotation about the sensor x axis. With x = y cross l, a positive pitch
  // tips the laser axis against the advance direction, which corrects a
  // positive direction angle.
  SensorPose pitched(double delta_deg) const {
    SensorPose p = *this;
    const double a = deg2rad(delta_deg);
    p.y_axis = rotate_about(y_axis, x_axis, a);
    p.laser_axis = rotate_about(laser_axis, x_axis, a);
    return p;
  }
};

struct Profile {
  SensorPose pose;
  std::vector<std::uint8_t> valid;
  std::vector<double> range;   // slant range along the ray, mm; NaN when invalid
  std::vector<Vec3> point;     // world-space hit
  std::vector<Vec3> normal;    // surface normal at the hit

  int valid_count() const {
    int n = 0;
    for (auto v : valid) n += v;
    return n;
  }

  std::optional<Vec3> centroid() const {
    Vec3 c = Vec3::Zero();
    int n = 0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
      if (valid[i]) {
        c += point[i];
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return Vec3(c / n);
  }
};

inline Vec3 fan_ray_direction(const SensorPose& pose, const SensorSpec& spec, int i) {
  const double half = deg2rad(spec.fov_deg) * 0.5;
  const double phi = half * (2.0 * i / (spec.points_per_profile - 1) - 1.0);
  return std::cos(phi) * pose.laser_axis + std::sin(phi) * pose.x_axis;
}

inline Profile simulate_profile(const MeshAccel& accel, const SensorPose& pose,
                                const SensorSpec& spec) {
  if (spec.points_per_profile < 2) throw Error("sensor: points_per_profile must be >= 2");
  const int n = spec.points_per_profile;
  Profile prof;
  prof.pose = pose;
  prof.valid.assign(n, 0);
  prof.range.assign(n, std::numeric_limits<double>::quiet_NaN());
  prof.point.assign(n, Vec3::Zero());
  prof.normal.assign(n, Vec3::Zero());
  parallel_for(n, [&](int i) {
    const Vec3 dir = fan_ray_direction(pose, spec, i);
    const auto hit = accel.raycast(Ray{pose.position, dir});
    if (!hit) return;
    if (hit->t < spec.z_min() || hit->t > spec.z_max()) return;
    prof.valid[i] = 1;
    prof.range[i] = hit->t;
    prof.point[i] = hit->point;
    prof.normal[i] = hit->normal;
  });
  return prof;
}

// Measurement noise: multiplicative speckle plus additive Gaussian on the
// slant range. Each (seed, profile_counter, point) triple owns its own
// substream, so noise is reproducible regardless of evaluation order. With
// both parameters zero the profile passes through bit-identical.
inline Profile add_noise(Profile prof, const SensorSpec& spec, std::uint64_t seed,
                         std::uint64_t profile_counter) {
  if (spec.noise_sigma_z == 0.0 && spec.speckle_strength == 0.0) return prof;
  const int n = static_cast<int>(prof.range.size());
  for (int i = 0; i < n; ++i) {
    if (!prof.valid[i]) continue;
    Rng rng(mix_seed(seed, profile_counter, static_cast<std::uint64_t>(i)));
    const double u = 2.0 * rng.uniform() - 1.0;
    const double g = rng.gaussian(0.0, spec.noise_sigma_z);
    double z = prof.range[i] * (1.0 + spec.speckle_strength * u) + g;
    if (z < spec.z_min() || z > spec.z_max()) {
      prof.valid[i] = 0;
      prof.range[i] = std::numeric_limits<double>::quiet_NaN();
      prof.point[i] = Vec3::Zero();
      prof.normal[i] = Vec3::Zero();
      continue;
    }
    prof.range[i] = z;
    prof.point[i] = prof.pose.position + z * fan_ray_direction(prof.pose, spec, i);
  }
  return prof;
}

// Mean slant range over valid points: the sensed stand-off D.
inline std::optional<double> mean_profile_distance(const Profile& prof) {
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < prof.valid.size(); ++i) {
    if (prof.valid[i]) {
      sum += prof.range[i];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Signed angle (degrees) between the laser axis and the mean surface
// normal: acos of -l.nbar, positive when the mean normal leans toward the
// advance direction.
inline std::optional<double> direction_angle(const Profile& prof, const SensorPose& pose) {
  Vec3 nbar = Vec3::Zero();
  int n = 0;
  for (std::size_t i = 0; i < prof.valid.size(); ++i) {
    if (prof.valid[i]) {
      nbar += prof.normal[i];
      ++n;
    }
  }
  if (n == 0 || nbar.norm() < 1e-12) return std::nullopt;
  nbar.normalize();
  const double c = std::clamp(-pose.laser_axis.dot(nbar), -1.0, 1.0);
  const double alpha = rad2deg(std::acos(c));
  return (nbar.dot(pose.y_axis) < 0.0) ? -alpha : alpha;
}

inline std::optional<double> direction_angle(const Profile& prof) {
  return direction_angle(prof, prof.pose);
}

// Signed spacing between consecutive profiles: displacement of the
// valid-point centroid projected on the advance direction. Negative values
// mean the sensor moved backward.
inline std::optional<double> profile_spacing(const Profile& prev, const Profile& cur,
                                             const Vec3& advance_dir) {
  const auto a = prev.centroid();
  const auto b = cur.centroid();
  if (!a || !b) return std::nullopt;
  return (*b - *a).dot(advance_dir);
}

inline void save_profile_csv(const Profile& prof, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path);
  out << "idx,valid,z_mm,x_mm,y_mm,z_world_mm,nx,ny,nz\n";
  for (std::size_t i = 0; i < prof.valid.size(); ++i) {
    out << i << ',' << static_cast<int>(prof.valid[i]) << ',' << fmt_double(prof.range[i]) << ','
        << fmt_double(prof.point[i].x()) << ',' << fmt_double(prof.point[i].y()) << ','
        << fmt_double(prof.point[i].z()) << ',' << fmt_double(prof.normal[i].x()) << ','
        << fmt_double(prof.normal[i].y()) << ',' << fmt_double(prof.normal[i].z()) << '\n';
  }
  if (!out) throw Error("write failure: " + path);
}

}  // namespace scanrl
