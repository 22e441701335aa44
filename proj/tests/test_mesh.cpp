#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <scanrl/mesh.hpp>

using namespace scanrl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / ("scanrl_mesh_" + leaf);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Exhaustive closest-hit search, independent of the BVH.
std::optional<Hit> brute_raycast(const TriangleMesh& m, const Ray& ray) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < m.triangles.size(); ++i) {
    const auto& t = m.triangles[i];
    const auto isect = intersect_triangle(ray.origin, ray.direction, m.vertices[t[0]],
                                          m.vertices[t[1]], m.vertices[t[2]]);
    if (!isect) continue;
    if (!best || isect->t < best->t) {
      best = Hit{isect->t, ray.origin + isect->t * ray.direction, m.tri_normals[i],
                 static_cast<int>(i)};
    }
  }
  return best;
}

}  // namespace

TEST_CASE("from_indexed recomputes normals and drops degenerates") {
  std::vector<Vec3> verts = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {2, 0, 0}};
  // second triangle is collinear -> zero area
  const TriangleMesh m = TriangleMesh::from_indexed(verts, {{0, 1, 2}, {0, 1, 3}});
  REQUIRE(m.triangles.size() == 1);
  CHECK(m.dropped_degenerate == 1);
  CHECK((m.tri_normals[0] - Vec3(0, 0, 1)).norm() < 1e-15);

  // clockwise winding flips the normal
  const TriangleMesh f = TriangleMesh::from_indexed(verts, {{0, 2, 1}});
  CHECK((f.tri_normals[0] - Vec3(0, 0, -1)).norm() < 1e-15);

  CHECK_THROWS_AS(TriangleMesh::from_indexed(verts, {{0, 1, 9}}), Error);
  CHECK_THROWS_AS(TriangleMesh::from_indexed(verts, {{0, 1, 3}}), Error);  // all degenerate
}

TEST_CASE("from_soup welds identical vertices") {
  // two triangles sharing an edge, passed as a 6-vertex soup
  const std::vector<Vec3> soup = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0},
                                  {0, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  const TriangleMesh m = TriangleMesh::from_soup(soup);
  CHECK(m.vertices.size() == 4);
  CHECK(m.triangles.size() == 2);
  CHECK_THROWS_AS(TriangleMesh::from_soup({{0, 0, 0}, {1, 0, 0}}), Error);
}

TEST_CASE("mesh digest tracks geometry") {
  const TriangleMesh a = make_plate(10, 5);
  const TriangleMesh b = make_plate(10, 5);
  const TriangleMesh c = make_plate(10, 6);
  CHECK(a.digest() == b.digest());
  CHECK(a.digest() != c.digest());
  CHECK(a.digest_hex().size() == 16);
}

TEST_CASE("intersect_triangle handles interior, boundary and miss cases") {
  const Vec3 v0(0, 0, 0), v1(2, 0, 0), v2(0, 2, 0);
  const Vec3 down(0, 0, -1);

  const auto mid = intersect_triangle(Vec3(0.5, 0.5, 3), down, v0, v1, v2);
  REQUIRE(mid.has_value());
  CHECK(mid->t == 3.0);

  // directly over a vertex and over an edge: tolerant tests must accept
  CHECK(intersect_triangle(Vec3(0, 0, 1), down, v0, v1, v2).has_value());
  CHECK(intersect_triangle(Vec3(1, 0, 1), down, v0, v1, v2).has_value());
  CHECK(intersect_triangle(Vec3(1, 1, 1), down, v0, v1, v2).has_value());  // hypotenuse

  // clear miss and behind-the-origin cases
  CHECK_FALSE(intersect_triangle(Vec3(3, 3, 1), down, v0, v1, v2).has_value());
  CHECK_FALSE(intersect_triangle(Vec3(0.5, 0.5, -1), down, v0, v1, v2).has_value());
  // ray parallel to the triangle plane
  CHECK_FALSE(intersect_triangle(Vec3(0.5, 0.5, 1), Vec3(1, 0, 0), v0, v1, v2).has_value());
}

TEST_CASE("edge rays register on a shared seam") {
  // a quad split along its diagonal: a ray down the exact seam must hit
  const TriangleMesh m = make_plate(10, 10);
  for (double s : {1.0, 3.0, 7.5}) {
    const auto hit = brute_raycast(m, Ray{Vec3(s, s, 5), Vec3(0, 0, -1)});
    REQUIRE(hit.has_value());
    CHECK(hit->t == Catch::Approx(5.0).margin(1e-9));
  }
}

TEST_CASE("make_plate spans the requested rectangle") {
  const TriangleMesh m = make_plate(100, 50, 2.5, -10, 5);
  CHECK(m.triangles.size() == 2);
  const Aabb bb = m.bounds();
  CHECK(bb.lo == Vec3(-10, 5, 2.5));
  CHECK(bb.hi == Vec3(90, 55, 2.5));
  CHECK((m.tri_normals[0] - Vec3(0, 0, 1)).norm() < 1e-15);
}

TEST_CASE("training piece spans its box exactly and starts flat") {
  const TriangleMesh m = make_training_piece(300, 80, 30, 1);
  const Aabb bb = m.bounds();
  CHECK(bb.lo == Vec3(0, 0, 0));
  CHECK(bb.hi.x() == 300.0);
  CHECK(bb.hi.y() == 80.0);
  CHECK(bb.hi.z() == 30.0);

  // the lead-in is flat at z = 0
  for (double x : {0.5, 10.0, 25.0}) {
    const auto hit = brute_raycast(m, Ray{Vec3(x, 40, 100), Vec3(0, 0, -1)});
    REQUIRE(hit.has_value());
    CHECK(std::abs(hit->point.z()) < 1e-9);
  }

  // deterministic in the seed
  CHECK(make_training_piece(300, 80, 30, 1).digest() == m.digest());
  CHECK(make_training_piece(300, 80, 30, 2).digest() != m.digest());
  CHECK_THROWS_AS(make_training_piece(50, 80, 30, 1), Error);  // too short to rise
}

TEST_CASE("wavy piece spans its box exactly with capped slopes") {
  const TriangleMesh m = make_wavy_piece(300, 80, 30, 7);
  const Aabb bb = m.bounds();
  CHECK(bb.lo.z() == 0.0);
  CHECK(bb.hi.z() == 30.0);
  CHECK(bb.hi.x() == 300.0);

  // surface height varies along x only: same x, different y, same z
  for (double x : {40.0, 111.0, 222.0}) {
    const auto a = brute_raycast(m, Ray{Vec3(x, 20, 100), Vec3(0, 0, -1)});
    const auto b = brute_raycast(m, Ray{Vec3(x, 60, 100), Vec3(0, 0, -1)});
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(a->point.z() == Catch::Approx(b->point.z()).margin(1e-9));
  }

  // chord slopes stay under the generator cap (22 deg plus sampling slack)
  const double cap = std::tan(deg2rad(23.0));
  for (double x = 0; x < 298; x += 1.0) {
    const auto a = brute_raycast(m, Ray{Vec3(x, 40, 100), Vec3(0, 0, -1)});
    const auto b = brute_raycast(m, Ray{Vec3(x + 1.0, 40, 100), Vec3(0, 0, -1)});
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(std::abs(b->point.z() - a->point.z()) <= cap + 1e-6);
  }

  CHECK(make_wavy_piece(300, 80, 30, 7).digest() == m.digest());
  CHECK(make_wavy_piece(300, 80, 30, 8).digest() != m.digest());
}

TEST_CASE("obj round-trip is lossless for double coordinates") {
  const fs::path dir = scratch_dir("obj");
  const TriangleMesh m = make_training_piece(120, 40, 15, 3);
  const fs::path path = dir / "piece.obj";
  save_mesh(m, path.string(), MeshFormat::Obj);
  const TriangleMesh back = load_mesh(path.string());
  REQUIRE(back.vertices.size() == m.vertices.size());
  REQUIRE(back.triangles.size() == m.triangles.size());
  CHECK(back.digest() == m.digest());
}

TEST_CASE("ply ascii and binary round-trips are lossless") {
  const fs::path dir = scratch_dir("ply");
  const TriangleMesh m = make_wavy_piece(100, 40, 12, 5);
  for (auto format : {MeshFormat::PlyAscii, MeshFormat::PlyBinary}) {
    const fs::path path = dir / (format == MeshFormat::PlyAscii ? "a.ply" : "b.ply");
    save_mesh(m, path.string(), format);
    const TriangleMesh back = load_mesh(path.string());
    REQUIRE(back.vertices.size() == m.vertices.size());
    REQUIRE(back.triangles.size() == m.triangles.size());
    CHECK(back.digest() == m.digest());
  }
}

TEST_CASE("stl round-trips preserve topology at float precision") {
  const fs::path dir = scratch_dir("stl");
  // integer coordinates survive the float conversion exactly
  std::vector<Vec3> verts = {{0, 0, 0}, {10, 0, 0}, {10, 8, 0}, {0, 8, 0}, {5, 4, 6}};
  const TriangleMesh m = TriangleMesh::from_indexed(
      verts, {{0, 1, 2}, {0, 2, 3}, {0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}});

  for (auto format : {MeshFormat::StlBinary, MeshFormat::StlAscii}) {
    const fs::path path = dir / (format == MeshFormat::StlBinary ? "bin.stl" : "asc.stl");
    save_mesh(m, path.string(), format);
    const TriangleMesh back = load_mesh(path.string());  // auto-detects the variant
    REQUIRE(back.triangles.size() == m.triangles.size());
    REQUIRE(back.vertices.size() == m.vertices.size());  // welding recovers shared vertices
    CHECK(back.digest() == m.digest());
  }

  // a float-truncating mesh still keeps its topology
  const TriangleMesh w = make_wavy_piece(60, 40, 10, 2);
  save_mesh(w, (dir / "wavy.stl").string(), MeshFormat::StlBinary);
  const TriangleMesh wb = load_mesh((dir / "wavy.stl").string());
  CHECK(wb.triangles.size() == w.triangles.size());
  CHECK(wb.vertices.size() == w.vertices.size());
}

TEST_CASE("obj parser resolves negative indices and fans polygons") {
  const fs::path dir = scratch_dir("objparse");
  {
    std::ofstream out(dir / "neg.obj");
    out << "v 0 0 0\nv 1 0 0\nv 1 1 0\nf -3 -2 -1\n";
  }
  const TriangleMesh neg = load_mesh((dir / "neg.obj").string());
  CHECK(neg.triangles.size() == 1);
  CHECK(neg.vertices.size() == 3);

  {
    std::ofstream out(dir / "quad.obj");
    out << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
  }
  const TriangleMesh quad = load_mesh((dir / "quad.obj").string());
  CHECK(quad.triangles.size() == 2);

  {
    std::ofstream out(dir / "texcoord.obj");
    out << "v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1/1 2/2 3/3\n";
  }
  const TriangleMesh tex = load_mesh((dir / "texcoord.obj").string());
  CHECK(tex.triangles.size() == 1);

  {
    std::ofstream out(dir / "bad.obj");
    out << "v 0 0 0\nf 1 2\n";
  }
  CHECK_THROWS_AS(load_mesh((dir / "bad.obj").string()), Error);
}

TEST_CASE("mesh scale multiplies coordinates") {
  const fs::path dir = scratch_dir("scale");
  save_mesh(make_plate(10, 4), (dir / "p.obj").string(), MeshFormat::Obj);
  const TriangleMesh m = load_mesh((dir / "p.obj").string(), MeshFormat::Auto, 2.5);
  CHECK(m.bounds().hi == Vec3(25, 10, 0));
}

TEST_CASE("loader reports missing files and unknown extensions") {
  CHECK_THROWS_AS(load_mesh("/nonexistent/file.obj"), Error);
  const fs::path dir = scratch_dir("ext");
  std::ofstream(dir / "data.xyz") << "1 2 3\n";
  CHECK_THROWS_AS(load_mesh((dir / "data.xyz").string()), Error);
}
