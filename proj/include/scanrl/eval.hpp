#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "scanrl/image.hpp"
#include "scanrl/planner.hpp"

namespace scanrl {

struct ErrorMap {
  std::vector<Vec3> points;
  std::vector<double> distance_error;     // slant range minus W_d, mm
  std::vector<double> orientation_error;  // profile direction angle, deg
  std::vector<int> pass_id;
  std::vector<int> profile_id;
};

struct ReplayResult {
  ErrorMap map;
  std::vector<double> d_mm;        // per captured profile, NaN if empty
  std::vector<double> alpha_deg;
  std::vector<double> ds_mm;       // spacing to the previous capture in the same pass
  std::vector<int> profile_pass;
  long profiles = 0;
};

namespace detail {

// Advance direction for the signed spacing: taken from the trajectory when
// recorded there, otherwise reconstructed as the horizontal projection of
// the pose advance axis (pitch rotates it only in the vertical plane).
inline Vec3 replay_advance(const Trajectory& traj, int pass_id, const SensorPose& pose) {
  if (pass_id >= 0 && pass_id < static_cast<int>(traj.pass_advance.size())) {
    return traj.pass_advance[pass_id];
  }
  Vec3 a(pose.y_axis.x(), pose.y_axis.y(), 0.0);
  const double n = a.norm();
  return n > 1e-12 ? Vec3(a / n) : pose.y_axis;
}

}  // namespace detail

// Re-simulates the sensor along every capture pose of a trajectory and
// collects the measured surface with its deviations.
inline ReplayResult replay(const MeshAccel& accel, const SensorSpec& sensor,
                           const Trajectory& traj, std::uint64_t noise_seed) {
  ReplayResult out;
  std::uint64_t counter = 0;
  Profile prev;
  int prev_pass = -1;
  bool have_prev = false;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& rec : traj.records) {
    if (!rec.capture) continue;
    const SensorPose pose = record_pose(rec);
    Profile prof = add_noise(simulate_profile(accel, pose, sensor), sensor, noise_seed, counter);
    const int pid = static_cast<int>(counter);
    ++counter;

    const auto d = mean_profile_distance(prof);
    const auto alpha = direction_angle(prof);
    out.d_mm.push_back(d.value_or(nan));
    out.alpha_deg.push_back(alpha.value_or(nan));
    if (have_prev && prev_pass == rec.pass_id) {
      const Vec3 adv = detail::replay_advance(traj, rec.pass_id, pose);
      out.ds_mm.push_back(profile_spacing(prev, prof, adv).value_or(nan));
    } else {
      out.ds_mm.push_back(nan);
    }
    out.profile_pass.push_back(rec.pass_id);

    const double alpha_val = alpha.value_or(nan);
    for (std::size_t i = 0; i < prof.valid.size(); ++i) {
      if (!prof.valid[i]) continue;
      out.map.points.push_back(prof.point[i]);
      out.map.distance_error.push_back(prof.range[i] - sensor.working_distance);
      out.map.orientation_error.push_back(alpha_val);
      out.map.pass_id.push_back(rec.pass_id);
      out.map.profile_id.push_back(pid);
    }
    prev = std::move(prof);
    prev_pass = rec.pass_id;
    have_prev = true;
  }
  out.profiles = static_cast<long>(out.d_mm.size());
  return out;
}

struct PassMetrics {
  int pass_id = 0;
  long profiles = 0;
  double mean_abs_dist = 0;
  double mean_abs_alpha = 0;
};

struct MetricsReport {
  long points = 0;
  long profiles = 0;
  long valid_profiles = 0;
  double in_range_fraction = 0;   // profiles with a usable measurement
  double mean_abs_dist = 0;       // mm, |D - W_d| over valid profiles
  double rms_dist = 0;
  double max_abs_dist = 0;
  double mean_abs_alpha = 0;      // deg
  double max_abs_alpha = 0;
  double mean_ds = 0;             // mm over defined spacings
  double ds_std = 0;
  double ds_within_tol_fraction = 0;  // |ds - ds_opt| <= 0.5 ds_opt
  double ds_opt = 0;
  std::vector<PassMetrics> per_pass;
};

inline MetricsReport summarize(const ReplayResult& rep, const SensorSpec& sensor, double ds_opt) {
  MetricsReport m;
  m.ds_opt = ds_opt;
  m.points = static_cast<long>(rep.map.points.size());
  m.profiles = rep.profiles;
  std::map<int, PassMetrics> per_pass;
  for (std::size_t i = 0; i < rep.d_mm.size(); ++i) {
    auto& pp = per_pass[rep.profile_pass[i]];
    pp.pass_id = rep.profile_pass[i];
    if (std::isnan(rep.d_mm[i])) continue;
    ++m.valid_profiles;
    ++pp.profiles;
    const double ed = std::abs(rep.d_mm[i] - sensor.working_distance);
    const double ea = std::abs(rep.alpha_deg[i]);
    m.mean_abs_dist += ed;
    m.rms_dist += ed * ed;
    m.max_abs_dist = std::max(m.max_abs_dist, ed);
    m.mean_abs_alpha += ea;
    m.max_abs_alpha = std::max(m.max_abs_alpha, ea);
    pp.mean_abs_dist += ed;
    pp.mean_abs_alpha += ea;
  }
  if (m.valid_profiles > 0) {
    m.mean_abs_dist /= m.valid_profiles;
    m.rms_dist = std::sqrt(m.rms_dist / m.valid_profiles);
    m.mean_abs_alpha /= m.valid_profiles;
  }
  if (m.profiles > 0) m.in_range_fraction = static_cast<double>(m.valid_profiles) / m.profiles;
  long ds_n = 0, ds_ok = 0;
  double ds_sq = 0;
  for (double ds : rep.ds_mm) {
    if (std::isnan(ds)) continue;
    ++ds_n;
    m.mean_ds += ds;
    ds_sq += ds * ds;
    if (std::abs(ds - ds_opt) <= 0.5 * ds_opt) ++ds_ok;
  }
  if (ds_n > 0) {
    m.mean_ds /= ds_n;
    m.ds_std = std::sqrt(std::max(0.0, ds_sq / ds_n - m.mean_ds * m.mean_ds));
    m.ds_within_tol_fraction = static_cast<double>(ds_ok) / ds_n;
  }
  for (auto& [id, pp] : per_pass) {
    if (pp.profiles > 0) {
      pp.mean_abs_dist /= pp.profiles;
      pp.mean_abs_alpha /= pp.profiles;
    }
    m.per_pass.push_back(pp);
  }
  return m;
}

inline nlohmann::json report_to_json(const MetricsReport& m) {
  nlohmann::json j;
  j["points"] = m.points;
  j["profiles"] = m.profiles;
  j["valid_profiles"] = m.valid_profiles;
  j["in_range_fraction"] = m.in_range_fraction;
  j["mean_abs_dist_mm"] = m.mean_abs_dist;
  j["rms_dist_mm"] = m.rms_dist;
  j["max_abs_dist_mm"] = m.max_abs_dist;
  j["mean_abs_alpha_deg"] = m.mean_abs_alpha;
  j["max_abs_alpha_deg"] = m.max_abs_alpha;
  j["mean_ds_mm"] = m.mean_ds;
  j["ds_std_mm"] = m.ds_std;
  j["ds_within_tol_fraction"] = m.ds_within_tol_fraction;
  j["ds_opt_mm"] = m.ds_opt;
  nlohmann::json pp = nlohmann::json::array();
  for (const auto& p : m.per_pass) {
    pp.push_back({{"pass_id", p.pass_id},
                  {"profiles", p.profiles},
                  {"mean_abs_dist_mm", p.mean_abs_dist},
                  {"mean_abs_alpha_deg", p.mean_abs_alpha}});
  }
  j["per_pass"] = pp;
  return j;
}

struct ComparisonReport {
  MetricsReport candidate;
  MetricsReport reference;
  double dist_improvement = 0;   // 1 - candidate/reference, positive is better
  double alpha_improvement = 0;
  double range_improvement = 0;  // in-range fraction delta
  bool candidate_better_dist = false;
  bool candidate_better_alpha = false;
};

inline ComparisonReport compare(const MetricsReport& candidate, const MetricsReport& reference) {
  ComparisonReport c;
  c.candidate = candidate;
  c.reference = reference;
  auto improvement = [](double cand, double ref) {
    if (ref <= 0) return cand <= 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    return 1.0 - cand / ref;
  };
  c.dist_improvement = improvement(candidate.mean_abs_dist, reference.mean_abs_dist);
  c.alpha_improvement = improvement(candidate.mean_abs_alpha, reference.mean_abs_alpha);
  c.range_improvement = candidate.in_range_fraction - reference.in_range_fraction;
  c.candidate_better_dist = candidate.mean_abs_dist < reference.mean_abs_dist;
  c.candidate_better_alpha = candidate.mean_abs_alpha < reference.mean_abs_alpha;
  return c;
}

inline nlohmann::json comparison_to_json(const ComparisonReport& c) {
  nlohmann::json j;
  j["candidate"] = report_to_json(c.candidate);
  j["reference"] = report_to_json(c.reference);
  j["dist_improvement"] = c.dist_improvement;
  j["alpha_improvement"] = c.alpha_improvement;
  j["range_improvement"] = c.range_improvement;
  j["candidate_better_dist"] = c.candidate_better_dist;
  j["candidate_better_alpha"] = c.candidate_better_alpha;
  return j;
}

// Trajectories can only be compared when they were produced against the
// same mesh and effective configuration.
inline void check_provenance(const Trajectory& a, const Trajectory& b, bool override_check) {
  if (override_check) return;
  if (!a.mesh_digest.empty() && !b.mesh_digest.empty() && a.mesh_digest != b.mesh_digest) {
    throw ProvenanceError("trajectories were recorded against different meshes");
  }
  if (!a.config_digest.empty() && !b.config_digest.empty() &&
      a.config_digest != b.config_digest) {
    throw ProvenanceError("trajectories were recorded with different configurations");
  }
}

enum class PointcloudFormat { PlyAscii, PlyBinary, XyzCsv };

inline void export_pointcloud(const ErrorMap& map, const std::string& path,
                              PointcloudFormat format,
                              const std::vector<std::string>& comments = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  const std::size_t n = map.points.size();
  if (format == PointcloudFormat::XyzCsv) {
    for (const auto& c : comments) out << "# " << c << '\n';
    out << "x_mm,y_mm,z_mm,distance_error_mm,orientation_error_deg\n";
    for (std::size_t i = 0; i < n; ++i) {
      out << fmt_double(map.points[i].x()) << ',' << fmt_double(map.points[i].y()) << ','
          << fmt_double(map.points[i].z()) << ',' << fmt_double(map.distance_error[i]) << ','
          << fmt_double(map.orientation_error[i]) << '\n';
    }
  } else {
    const bool binary = format == PointcloudFormat::PlyBinary;
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    for (const auto& c : comments) out << "comment " << c << '\n';
    out << "element vertex " << n << "\n"
        << "property double x\nproperty double y\nproperty double z\n"
        << "property double distance_error\nproperty double orientation_error\n"
        << "end_header\n";
    for (std::size_t i = 0; i < n; ++i) {
      const double row[5] = {map.points[i].x(), map.points[i].y(), map.points[i].z(),
                             map.distance_error[i], map.orientation_error[i]};
      if (binary) {
        out.write(reinterpret_cast<const char*>(row), sizeof(row));
      } else {
        out << fmt_double(row[0]) << ' ' << fmt_double(row[1]) << ' ' << fmt_double(row[2]) << ' '
            << fmt_double(row[3]) << ' ' << fmt_double(row[4]) << '\n';
      }
    }
  }
  if (!out) throw Error("write failure: " + path);
}

namespace detail {

// stream extraction rejects "nan"/"inf" tokens, strtod accepts them
inline bool parse_row(const std::string& line, double* out, int n) {
  const char* s = line.c_str();
  for (int i = 0; i < n; ++i) {
    char* end = nullptr;
    out[i] = std::strtod(s, &end);
    if (end == s) return false;
    s = end;
    while (*s == ' ' || *s == ',' || *s == '\t' || *s == '\r') ++s;
  }
  return true;
}

}  // namespace detail

// Reads back clouds written by export_pointcloud.
inline ErrorMap load_pointcloud(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open point cloud: " + path);
  ErrorMap map;
  std::string line;
  do {
    if (!std::getline(in, line)) throw Error("point cloud: empty file");
  } while (line.rfind("# ", 0) == 0);
  if (line.rfind("x_mm,", 0) == 0) {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      double row[5];
      if (!detail::parse_row(line, row, 5)) throw Error("point cloud csv: bad row");
      map.points.emplace_back(row[0], row[1], row[2]);
      map.distance_error.push_back(row[3]);
      map.orientation_error.push_back(row[4]);
    }
    return map;
  }
  if (line.rfind("ply", 0) != 0) throw Error("point cloud: unknown format");
  bool binary = false;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string f;
      ls >> f;
      binary = (f == "binary_little_endian");
    } else if (kw == "element") {
      std::string name;
      ls >> name >> count;
    } else if (kw == "end_header") {
      break;
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    double row[5];
    if (binary) {
      in.read(reinterpret_cast<char*>(row), sizeof(row));
      if (!in) throw Error("point cloud ply: truncated payload");
    } else {
      if (!std::getline(in, line) || !detail::parse_row(line, row, 5)) {
        throw Error("point cloud ply: truncated payload");
      }
    }
    map.points.emplace_back(row[0], row[1], row[2]);
    map.distance_error.push_back(row[3]);
    map.orientation_error.push_back(row[4]);
  }
  return map;
}

enum class ErrorField { Distance, Orientation };

// Top view of the measured points colored by signed error; the right strip
// is the color scale from -limit (blue) to +limit (red).
inline Image render_error_map(const ErrorMap& map, const Aabb& bounds, ErrorField field,
                              double limit, const std::string& path = {},
                              const std::vector<std::pair<std::string, std::string>>& text = {}) {
  const double ext_x = std::max(bounds.hi.x() - bounds.lo.x(), 1e-9);
  const double ext_y = std::max(bounds.hi.y() - bounds.lo.y(), 1e-9);
  const int plot_w = 760;
  const int plot_h = std::clamp(static_cast<int>(plot_w * ext_y / ext_x), 120, 1400);
  const int bar_w = 28, gap = 12, margin = 16;
  Image img(plot_w + bar_w + gap + 2 * margin, plot_h + 2 * margin, Rgb{235, 235, 235});
  img.fill_rect(margin, margin, margin + plot_w, margin + plot_h, Rgb{210, 210, 210});

  const auto& vals = field == ErrorField::Distance ? map.distance_error : map.orientation_error;
  for (std::size_t i = 0; i < map.points.size(); ++i) {
    if (!std::isfinite(vals[i])) continue;
    const int px = margin + static_cast<int>((map.points[i].x() - bounds.lo.x()) / ext_x *
                                             (plot_w - 1));
    const int py = margin + plot_h - 1 -
                   static_cast<int>((map.points[i].y() - bounds.lo.y()) / ext_y * (plot_h - 1));
    img.set(px, py, diverging_color(vals[i] / limit));
  }
  const int bx = margin + plot_w + gap;
  for (int y = 0; y < plot_h; ++y) {
    const double t = 1.0 - 2.0 * y / (plot_h - 1);
    const Rgb c = diverging_color(t);
    for (int x = 0; x < bar_w; ++x) img.set(bx + x, margin + y, c);
  }
  if (!path.empty()) save_png(img, path, text);
  return img;
}

}  // namespace scanrl
