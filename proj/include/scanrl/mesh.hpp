#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "scanrl/digest.hpp"
#include "scanrl/geometry.hpp"
#include "scanrl/rng.hpp"

namespace scanrl {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
};

struct Hit {
  double t = 0;  // mm along the ray
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  int tri_id = -1;
};

// Indexed triangle surface in mm. Normals are recomputed from winding on
// construction; triangles with area < 1e-12 mm^2 are dropped and counted.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> tri_normals;
  int dropped_degenerate = 0;

  static TriangleMesh from_indexed(std::vector<Vec3> verts,
                                   const std::vector<std::array<int, 3>>& tris) {
    TriangleMesh m;
    m.vertices = std::move(verts);
    m.triangles.reserve(tris.size());
    m.tri_normals.reserve(tris.size());
    const int n = static_cast<int>(m.vertices.size());
    for (const auto& t : tris) {
      if (t[0] < 0 || t[1] < 0 || t[2] < 0 || t[0] >= n || t[1] >= n || t[2] >= n) {
        throw Error("mesh: triangle index out of range");
      }
      const Vec3 e1 = m.vertices[t[1]] - m.vertices[t[0]];
      const Vec3 e2 = m.vertices[t[2]] - m.vertices[t[0]];
      const Vec3 cr = e1.cross(e2);
      const double area = 0.5 * cr.norm();
      if (area < 1e-12) {
        ++m.dropped_degenerate;
        continue;
      }
      m.triangles.push_back(t);
      m.tri_normals.push_back(cr.normalized());
    }
    if (m.triangles.empty()) throw Error("mesh: no non-degenerate triangles");
    return m;
  }

  // One vertex triple per triangle, welded on exact coordinate equality.
  static TriangleMesh from_soup(const std::vector<Vec3>& tri_vertices) {
    if (tri_vertices.size() % 3 != 0) throw Error("mesh: soup size not a multiple of 3");
    std::unordered_map<std::string, int> seen;
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> tris;
    auto intern = [&](const Vec3& p) {
      std::string key(reinterpret_cast<const char*>(p.data()), 3 * sizeof(double));
      auto [it, inserted] = seen.emplace(std::move(key), static_cast<int>(verts.size()));
      if (inserted) verts.push_back(p);
      return it->second;
    };
    for (std::size_t i = 0; i + 2 < tri_vertices.size(); i += 3) {
      tris.push_back({intern(tri_vertices[i]), intern(tri_vertices[i + 1]), intern(tri_vertices[i + 2])});
    }
    return from_indexed(std::move(verts), tris);
  }

  Aabb bounds() const {
    Aabb b;
    for (const auto& v : vertices) b.expand(v);
    return b;
  }

  std::uint64_t digest() const {
    Digest d;
    std::uint64_t nv = vertices.size(), nt = triangles.size();
    d.update_pod(nv).update_pod(nt);
    for (const auto& v : vertices) d.update(v.data(), 3 * sizeof(double));
    for (const auto& t : triangles) d.update(t.data(), sizeof(t));
    return d.value();
  }

  std::string digest_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest()));
    return buf;
  }
};

struct TriIntersection {
  double t, u, v;
};

// Moller-Trumbore in doubles. The barycentric tests carry a tiny tolerance
// so rays grazing a shared edge register on at least one of its triangles
// instead of slipping through the seam. Both the BVH and the brute-force
// oracle call this, so agreement stays bit-exact per triangle.
inline std::optional<TriIntersection> intersect_triangle(const Vec3& origin, const Vec3& dir,
                                                         const Vec3& v0, const Vec3& v1,
                                                         const Vec3& v2) {
  constexpr double kBaryEps = 1e-12;
  const Vec3 e1 = v1 - v0;
  const Vec3 e2 = v2 - v0;
  const Vec3 pvec = dir.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-14) return std::nullopt;
  const double inv_det = 1.0 / det;
  const Vec3 tvec = origin - v0;
  const double u = tvec.dot(pvec) * inv_det;
  if (u < -kBaryEps || u > 1.0 + kBaryEps) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv_det;
  if (v < -kBaryEps || u + v > 1.0 + kBaryEps) return std::nullopt;
  const double t = e2.dot(qvec) * inv_det;
  if (t <= 0.0) return std::nullopt;
  return TriIntersection{t, u, v};
}

enum class MeshFormat { Auto, StlBinary, StlAscii, Obj, Ply, PlyAscii, PlyBinary };

namespace detail {

inline void stl_weld(const std::vector<std::array<float, 9>>& facets, std::vector<Vec3>& verts,
                     std::vector<std::array<int, 3>>& tris) {
  std::unordered_map<std::string, int> seen;
  auto intern = [&](const float* p) {
    std::string key(reinterpret_cast<const char*>(p), 3 * sizeof(float));
    auto [it, inserted] = seen.emplace(std::move(key), static_cast<int>(verts.size()));
    if (inserted) verts.emplace_back(p[0], p[1], p[2]);
    return it->second;
  };
  for (const auto& f : facets) {
    tris.push_back({intern(&f[0]), intern(&f[3]), intern(&f[6])});
  }
}

inline TriangleMesh load_stl_binary(std::istream& in) {
  char header[80];
  in.read(header, 80);
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in) throw Error("stl-binary: truncated header");
  std::vector<std::array<float, 9>> facets;
  facets.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    float rec[12];
    std::uint16_t attr;
    in.read(reinterpret_cast<char*>(rec), 48);
    in.read(reinterpret_cast<char*>(&attr), 2);
    if (!in) throw Error("stl-binary: truncated facet record");
    std::array<float, 9> f;
    std::memcpy(f.data(), rec + 3, 9 * sizeof(float));
    facets.push_back(f);
  }
  if (facets.empty()) throw Error("stl-binary: empty mesh");
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  stl_weld(facets, verts, tris);
  return TriangleMesh::from_indexed(std::move(verts), tris);
}

inline TriangleMesh load_stl_ascii(std::istream& in) {
  std::vector<std::array<float, 9>> facets;
  std::string tok;
  std::array<float, 9> cur{};
  int vert_i = 0;
  bool in_solid = false;
  while (in >> tok) {
    if (tok == "solid") {
      in_solid = true;
      std::string rest;
      std::getline(in, rest);
    } else if (tok == "vertex") {
      if (!in_solid) throw Error("stl-ascii: vertex outside solid");
      if (vert_i >= 3) throw Error("stl-ascii: more than 3 vertices in facet");
      double x, y, z;
      if (!(in >> x >> y >> z)) throw Error("stl-ascii: malformed vertex");
      cur[vert_i * 3 + 0] = static_cast<float>(x);
      cur[vert_i * 3 + 1] = static_cast<float>(y);
      cur[vert_i * 3 + 2] = static_cast<float>(z);
      ++vert_i;
    } else if (tok == "endfacet") {
      if (vert_i != 3) throw Error("stl-ascii: facet without 3 vertices");
      facets.push_back(cur);
      vert_i = 0;
    } else if (tok == "facet" || tok == "normal") {
      // facet normal nx ny nz -- normals recomputed from winding, skip values
    } else if (tok == "outer" || tok == "loop" || tok == "endloop" || tok == "endsolid") {
      if (tok == "endsolid") {
        std::string rest;
        std::getline(in, rest);
      }
    } else {
      double dummy;
      std::istringstream probe(tok);
      if (!(probe >> dummy)) throw Error("stl-ascii: unexpected token '" + tok + "'");
    }
  }
  if (!in_solid || facets.empty()) throw Error("stl-ascii: empty mesh");
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  stl_weld(facets, verts, tris);
  return TriangleMesh::from_indexed(std::move(verts), tris);
}

inline TriangleMesh load_obj(std::istream& in) {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  std::string line;
  auto resolve = [&](long idx) -> int {
    if (idx > 0) return static_cast<int>(idx - 1);
    if (idx < 0) return static_cast<int>(static_cast<long>(verts.size()) + idx);
    throw Error("obj: zero face index");
  };
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    if (kind == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw Error("obj: malformed vertex line");
      verts.emplace_back(x, y, z);
    } else if (kind == "f") {
      std::vector<int> poly;
      std::string ref;
      while (ls >> ref) {
        poly.push_back(resolve(std::strtol(ref.c_str(), nullptr, 10)));
      }
      if (poly.size() < 3) throw Error("obj: face with fewer than 3 vertices");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        tris.push_back({poly[0], poly[k], poly[k + 1]});
      }
    }
  }
  if (verts.empty() || tris.empty()) throw Error("obj: empty mesh");
  return TriangleMesh::from_indexed(std::move(verts), tris);
}

struct PlyProperty {
  std::string name;
  int size = 0;          // bytes, scalar
  bool is_float = false;
  bool is_list = false;
  int count_size = 0;
  int item_size = 0;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

inline int ply_type_size(const std::string& t, bool& is_float) {
  is_float = false;
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32") return 4;
  if (t == "float" || t == "float32") { is_float = true; return 4; }
  if (t == "double" || t == "float64") { is_float = true; return 8; }
  throw Error("ply: unknown type '" + t + "'");
}

inline double ply_read_scalar(std::istream& in, int size, bool is_float) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), size);
  if (!in) throw Error("ply: truncated binary payload");
  if (is_float) {
    if (size == 4) { float f; std::memcpy(&f, buf, 4); return f; }
    double d; std::memcpy(&d, buf, 8); return d;
  }
  std::int64_t v = 0;
  std::memcpy(&v, buf, size);  // little-endian host assumed
  if (size < 8) v &= (1LL << (8 * size)) - 1;
  return static_cast<double>(v);
}

inline TriangleMesh load_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") throw Error("ply: missing magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      std::string f;
      ls >> f;
      if (f == "ascii") binary = false;
      else if (f == "binary_little_endian") binary = true;
      else throw Error("ply: unsupported format '" + f + "'");
    } else if (kw == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw Error("ply: property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        bool dummy;
        p.is_list = true;
        p.count_size = ply_type_size(ct, dummy);
        p.item_size = ply_type_size(it, dummy);
      } else {
        ls >> p.name;
        p.size = ply_type_size(t, p.is_float);
      }
      elements.back().props.push_back(p);
    } else if (kw == "end_header") {
      break;
    }
  }
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  for (const auto& e : elements) {
    int ix = -1, iy = -1, iz = -1, iface = -1;
    for (std::size_t p = 0; p < e.props.size(); ++p) {
      if (e.props[p].name == "x") ix = static_cast<int>(p);
      if (e.props[p].name == "y") iy = static_cast<int>(p);
      if (e.props[p].name == "z") iz = static_cast<int>(p);
      if (e.props[p].is_list &&
          (e.props[p].name == "vertex_indices" || e.props[p].name == "vertex_index"))
        iface = static_cast<int>(p);
    }
    const bool is_vertex = (e.name == "vertex" && ix >= 0 && iy >= 0 && iz >= 0);
    const bool is_face = (e.name == "face" && iface >= 0);
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 v = Vec3::Zero();
      std::vector<long> poly;
      for (std::size_t p = 0; p < e.props.size(); ++p) {
        const auto& prop = e.props[p];
        if (prop.is_list) {
          double cnt = binary ? ply_read_scalar(in, prop.count_size, false) : [&] {
            double c; if (!(in >> c)) throw Error("ply: truncated list count"); return c;
          }();
          for (int k = 0; k < static_cast<int>(cnt); ++k) {
            double item = binary ? ply_read_scalar(in, prop.item_size, false) : [&] {
              double c; if (!(in >> c)) throw Error("ply: truncated list item"); return c;
            }();
            if (static_cast<int>(p) == iface) poly.push_back(static_cast<long>(item));
          }
        } else {
          double val = binary ? ply_read_scalar(in, prop.size, prop.is_float) : [&] {
            double c; if (!(in >> c)) throw Error("ply: truncated scalar"); return c;
          }();
          if (static_cast<int>(p) == ix) v.x() = val;
          if (static_cast<int>(p) == iy) v.y() = val;
          if (static_cast<int>(p) == iz) v.z() = val;
        }
      }
      if (is_vertex) verts.push_back(v);
      if (is_face) {
        if (poly.size() < 3) throw Error("ply: face with fewer than 3 indices");
        for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
          tris.push_back({static_cast<int>(poly[0]), static_cast<int>(poly[k]),
                          static_cast<int>(poly[k + 1])});
        }
      }
    }
  }
  if (verts.empty() || tris.empty()) throw Error("ply: empty mesh");
  return TriangleMesh::from_indexed(std::move(verts), tris);
}

}  // namespace detail

inline TriangleMesh load_mesh(const std::string& path, MeshFormat format = MeshFormat::Auto,
                              double scale = 1.0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open mesh file: " + path);

  if (format == MeshFormat::Auto) {
    auto ends_with = [&](const char* suf) {
      std::string s = path;
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      const std::string e(suf);
      return s.size() >= e.size() && s.compare(s.size() - e.size(), e.size(), e) == 0;
    };
    if (ends_with(".obj")) format = MeshFormat::Obj;
    else if (ends_with(".ply")) format = MeshFormat::Ply;
    else if (ends_with(".stl")) {
      in.seekg(0, std::ios::end);
      const auto file_size = static_cast<std::uint64_t>(in.tellg());
      in.seekg(80);
      std::uint32_t n = 0;
      in.read(reinterpret_cast<char*>(&n), 4);
      in.seekg(0);
      format = (file_size == 84ULL + 50ULL * n) ? MeshFormat::StlBinary : MeshFormat::StlAscii;
    } else {
      throw Error("cannot infer mesh format from path: " + path);
    }
  }

  TriangleMesh mesh;
  switch (format) {
    case MeshFormat::StlBinary: mesh = detail::load_stl_binary(in); break;
    case MeshFormat::StlAscii: mesh = detail::load_stl_ascii(in); break;
    case MeshFormat::Obj: mesh = detail::load_obj(in); break;
    case MeshFormat::Ply:
    case MeshFormat::PlyAscii:
    case MeshFormat::PlyBinary: mesh = detail::load_ply(in); break;
    default: throw Error("load_mesh: unsupported format");
  }
  if (scale != 1.0) {
    for (auto& v : mesh.vertices) v *= scale;
  }
  return mesh;
}

inline void save_mesh(const TriangleMesh& mesh, const std::string& path, MeshFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  switch (format) {
    case MeshFormat::StlBinary: {
      char header[80] = "scanrl stl-binary";
      out.write(header, 80);
      const std::uint32_t n = static_cast<std::uint32_t>(mesh.triangles.size());
      out.write(reinterpret_cast<const char*>(&n), 4);
      for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        float rec[12];
        for (int k = 0; k < 3; ++k) rec[k] = static_cast<float>(mesh.tri_normals[i][k]);
        for (int v = 0; v < 3; ++v)
          for (int k = 0; k < 3; ++k)
            rec[3 + v * 3 + k] = static_cast<float>(mesh.vertices[mesh.triangles[i][v]][k]);
        const std::uint16_t attr = 0;
        out.write(reinterpret_cast<const char*>(rec), 48);
        out.write(reinterpret_cast<const char*>(&attr), 2);
      }
      break;
    }
    case MeshFormat::StlAscii: {
      out << "solid scanrl\n";
      for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const Vec3& n = mesh.tri_normals[i];
        out << "  facet normal " << fmt_double(n.x()) << ' ' << fmt_double(n.y()) << ' '
            << fmt_double(n.z()) << "\n    outer loop\n";
        for (int v = 0; v < 3; ++v) {
          const Vec3& p = mesh.vertices[mesh.triangles[i][v]];
          out << "      vertex " << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' '
              << fmt_double(p.z()) << '\n';
        }
        out << "    endloop\n  endfacet\n";
      }
      out << "endsolid scanrl\n";
      break;
    }
    case MeshFormat::Obj: {
      for (const auto& v : mesh.vertices)
        out << "v " << fmt_double(v.x()) << ' ' << fmt_double(v.y()) << ' ' << fmt_double(v.z())
            << '\n';
      for (const auto& t : mesh.triangles)
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
      break;
    }
    case MeshFormat::Ply:
    case MeshFormat::PlyAscii:
    case MeshFormat::PlyBinary: {
      const bool binary = (format == MeshFormat::PlyBinary);
      out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
          << "element vertex " << mesh.vertices.size() << "\n"
          << "property double x\nproperty double y\nproperty double z\n"
          << "element face " << mesh.triangles.size() << "\n"
          << "property list uchar int vertex_indices\nend_header\n";
      if (binary) {
        for (const auto& v : mesh.vertices)
          out.write(reinterpret_cast<const char*>(v.data()), 3 * sizeof(double));
        for (const auto& t : mesh.triangles) {
          const unsigned char c = 3;
          out.write(reinterpret_cast<const char*>(&c), 1);
          const std::int32_t idx[3] = {t[0], t[1], t[2]};
          out.write(reinterpret_cast<const char*>(idx), 12);
        }
      } else {
        for (const auto& v : mesh.vertices)
          out << fmt_double(v.x()) << ' ' << fmt_double(v.y()) << ' ' << fmt_double(v.z()) << '\n';
        for (const auto& t : mesh.triangles)
          out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
      }
      break;
    }
    default: throw Error("save_mesh: unsupported format");
  }
  if (!out) throw Error("write failure: " + path);
}

// ---------------------------------------------------------------------------
// Procedural inspection pieces. Height varies along X only (extruded
// profile), so the surface normal tilts purely in the advance direction
// that passes run along. Z is up; the top sheet faces +Z.

namespace detail {

struct HeightSegment {
  double x0, x1, z0, z1;
  enum Kind { Flat, Ramp, Smooth } kind;
};

class HeightProfile {
 public:
  void add(double x1, double z1, HeightSegment::Kind kind) {
    const double x0 = segments_.empty() ? 0.0 : segments_.back().x1;
    const double z0 = segments_.empty() ? 0.0 : segments_.back().z1;
    segments_.push_back({x0, x1, z0, z1, kind});
  }

  double end_x() const { return segments_.empty() ? 0.0 : segments_.back().x1; }
  double end_z() const { return segments_.empty() ? 0.0 : segments_.back().z1; }

  double eval(double x) const {
    for (const auto& s : segments_) {
      if (x <= s.x1 || &s == &segments_.back()) {
        if (s.kind == HeightSegment::Flat) return s.z0;
        const double u = std::clamp((x - s.x0) / (s.x1 - s.x0), 0.0, 1.0);
        if (s.kind == HeightSegment::Ramp) return s.z0 + (s.z1 - s.z0) * u;
        return s.z0 + (s.z1 - s.z0) * 0.5 * (1.0 - std::cos(kPi * u));
      }
    }
    return 0.0;
  }

 private:
  std::vector<HeightSegment> segments_;
};

inline TriangleMesh extrude_profile(double length, double width,
                                    const std::function<double(double)>& height_at,
                                    double dx = 2.0, double strip_mm = 20.0) {
  const int nx = std::max(2, static_cast<int>(std::ceil(length / dx)));
  const int ny = std::max(1, static_cast<int>(std::lround(width / strip_mm)));
  std::vector<Vec3> verts;
  verts.reserve(static_cast<std::size_t>(nx + 1) * (ny + 1));
  for (int i = 0; i <= nx; ++i) {
    const double x = (i == nx) ? length : length * static_cast<double>(i) / nx;
    const double h = height_at(x);
    for (int j = 0; j <= ny; ++j) {
      const double y = (j == ny) ? width : width * static_cast<double>(j) / ny;
      verts.emplace_back(x, y, h);
    }
  }
  std::vector<std::array<int, 3>> tris;
  tris.reserve(static_cast<std::size_t>(nx) * ny * 2);
  auto vid = [ny](int i, int j) { return i * (ny + 1) + j; };
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      // wound counter-clockwise seen from +Z
      tris.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
      tris.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
    }
  }
  return TriangleMesh::from_indexed(std::move(verts), tris);
}

}  // namespace detail

// Open top sheet mimicking the training part: flat plateaus, linear ramps
// with 10..30 degree slopes and smooth cosine height steps. The profile
// touches z=0 and z=height exactly, so the bounding box is exactly
// length x width x height. Deterministic for a fixed seed.
inline TriangleMesh make_training_piece(double length, double width, double height,
                                        std::uint64_t feature_seed) {
  if (length <= 0 || width <= 0 || height <= 0) {
    throw Error("make_training_piece: dimensions must be positive");
  }
  const double max_slope = std::tan(deg2rad(30.0));
  const double lead_flat = std::min(30.0, 0.1 * length);
  const double min_rise_run = height / max_slope;
  if (length < lead_flat + min_rise_run + 40.0) {
    throw Error("make_training_piece: length too short for requested height");
  }

  Rng rng(mix_seed(feature_seed, 0x7261696c));
  detail::HeightProfile prof;
  prof.add(lead_flat, 0.0, detail::HeightSegment::Flat);
  // the first climb reaches the full height and holds it briefly so the
  // sampled lattice contains the exact z extent
  prof.add(prof.end_x() + height / std::tan(deg2rad(rng.uniform(22.0, 28.0))), height,
           detail::HeightSegment::Ramp);
  prof.add(prof.end_x() + rng.uniform(8.0, 14.0), height, detail::HeightSegment::Flat);
  // alternate descents and ascents for the rest of the part; frequent
  // slope-sign flips keep both pitch-correction directions in play along
  // every pass instead of leaving one of them to a single long ramp
  const double tail = 12.0;
  bool descending = true;
  while (true) {
    const double remaining = length - tail - prof.end_x();
    if (remaining < 25.0) break;
    const double cur = prof.end_z();
    const double level = descending ? rng.uniform(0.0, std::max(cur - 0.35 * height, 0.0))
                                    : rng.uniform(std::min(cur + 0.35 * height, height), height);
    const double dz = std::abs(level - cur);
    const double angle = deg2rad(rng.uniform(15.0, 28.0));
    double run;
    detail::HeightSegment::Kind kind;
    if (rng.uniform() < 0.5) {
      kind = detail::HeightSegment::Ramp;
      run = dz / std::tan(angle);
    } else {
      kind = detail::HeightSegment::Smooth;
      // peak slope of the cosine blend is pi*dz/(2*run)
      run = kPi * dz / (2.0 * std::tan(angle));
    }
    if (run > remaining - 10.0) break;
    prof.add(prof.end_x() + run, level, kind);
    descending = !descending;
    if (rng.uniform() < 0.3) {
      const double flat = rng.uniform(4.0, 10.0);
      if (flat < length - tail - prof.end_x()) {
        prof.add(prof.end_x() + flat, prof.end_z(), detail::HeightSegment::Flat);
      }
    }
  }
  prof.add(length, prof.end_z(), detail::HeightSegment::Flat);

  return detail::extrude_profile(length, width, [&](double x) { return prof.eval(x); });
}

// Held-out evaluation sheet: a gentle linear drift plus smooth multi-sine
// bumps, normalized to the exact z extent with chord slopes capped at
// 22 degrees. Distinct feature family from make_training_piece.
inline TriangleMesh make_wavy_piece(double length, double width, double height,
                                    std::uint64_t seed) {
  if (length <= 0 || width <= 0 || height <= 0) {
    throw Error("make_wavy_piece: dimensions must be positive");
  }
  Rng rng(mix_seed(seed, 0x77617679));
  const double amp[3] = {rng.uniform(0.85, 1.15), 0.55 * rng.uniform(0.85, 1.15),
                         0.3 * rng.uniform(0.85, 1.15)};
  const double base_wl[3] = {rng.uniform(150.0, 220.0), rng.uniform(95.0, 140.0),
                             rng.uniform(65.0, 95.0)};
  const double phase[3] = {rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi),
                           rng.uniform(0.0, 2.0 * kPi)};
  double drift = rng.uniform(0.8, 1.5) / length * (rng.uniform() < 0.5 ? -1.0 : 1.0);

  const double dx = 2.0;
  const int nx = std::max(2, static_cast<int>(std::ceil(length / dx)));
  const double slope_cap = std::tan(deg2rad(22.0));

  std::vector<double> h(nx + 1);
  for (int attempt = 0;; ++attempt) {
    const double stretch = 1.0 + 0.35 * attempt;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = 0; i <= nx; ++i) {
      const double x = (i == nx) ? length : length * static_cast<double>(i) / nx;
      double s = drift * x;
      for (int k = 0; k < 3; ++k) s += amp[k] * std::sin(2.0 * kPi * x / (base_wl[k] * stretch) + phase[k]);
      h[i] = s;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    const double scale = height / (hi - lo);
    double max_chord = 0;
    for (int i = 0; i <= nx; ++i) h[i] = (h[i] - lo) * scale;
    for (int i = 0; i < nx; ++i) {
      max_chord = std::max(max_chord, std::abs(h[i + 1] - h[i]) / (length / nx));
    }
    if (max_chord <= slope_cap || attempt >= 24) {
      // pin the extremes so the bounding box is exact
      int imin = 0, imax = 0;
      for (int i = 1; i <= nx; ++i) {
        if (h[i] < h[imin]) imin = i;
        if (h[i] > h[imax]) imax = i;
      }
      h[imin] = 0.0;
      h[imax] = height;
      break;
    }
    drift /= 1.25;
  }

  return detail::extrude_profile(length, width, [&](double x) {
    const double fi = x / length * nx;
    const int i = std::min(nx - 1, static_cast<int>(fi));
    const double u = fi - i;
    return h[i] * (1.0 - u) + h[i + 1] * u;
  });
}

// Flat rectangular sheet at the given z, facing +Z.
inline TriangleMesh make_plate(double length, double width, double z = 0.0,
                               double x0 = 0.0, double y0 = 0.0) {
  std::vector<Vec3> verts = {{x0, y0, z}, {x0 + length, y0, z}, {x0 + length, y0 + width, z},
                             {x0, y0 + width, z}};
  return TriangleMesh::from_indexed(std::move(verts), {{0, 1, 2}, {0, 2, 3}});
}

}  // namespace scanrl
