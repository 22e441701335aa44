#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "scanrl/mesh.hpp"

namespace scanrl {

// Median-split BVH over triangle centroids. The build is deterministic:
// ties in centroid coordinate are broken by triangle id, so the same mesh
// always yields the same tree.
class MeshAccel {
 public:
  struct Node {
    Aabb box;
    int left = -1;   // node index, internal only
    int right = -1;
    int first = 0;   // leaf range into tri_order_
    int count = 0;
  };

  explicit MeshAccel(TriangleMesh mesh) : mesh_(std::move(mesh)) {
    const int n = static_cast<int>(mesh_.triangles.size());
    tri_order_.resize(n);
    centroids_.resize(n);
    tri_boxes_.resize(n);
    for (int i = 0; i < n; ++i) {
      tri_order_[i] = i;
      const auto& t = mesh_.triangles[i];
      Aabb b;
      b.expand(mesh_.vertices[t[0]]);
      b.expand(mesh_.vertices[t[1]]);
      b.expand(mesh_.vertices[t[2]]);
      tri_boxes_[i] = b;
      centroids_[i] = (mesh_.vertices[t[0]] + mesh_.vertices[t[1]] + mesh_.vertices[t[2]]) / 3.0;
    }
    nodes_.reserve(static_cast<std::size_t>(2 * n));
    build(0, n);
    centroids_ = {};
    tri_boxes_ = {};
  }

  const TriangleMesh& mesh() const { return mesh_; }
  Aabb bounds() const { return nodes_.empty() ? Aabb{} : nodes_[0].box; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  std::optional<Hit> raycast(const Ray& ray) const {
    if (nodes_.empty()) return std::nullopt;
    const Vec3 inv_dir(1.0 / ray.direction.x(), 1.0 / ray.direction.y(),
                       1.0 / ray.direction.z());
    double best_t = std::numeric_limits<double>::infinity();
    int best_tri = std::numeric_limits<int>::max();

    struct Visit {
      int node;
      double entry;
    };
    Visit stack[64];
    int sp = 0;
    double entry0;
    if (!slab_hit(nodes_[0].box, ray.origin, inv_dir, entry0)) return std::nullopt;
    stack[sp++] = {0, entry0};

    while (sp > 0) {
      const Visit v = stack[--sp];
      if (v.entry > best_t) continue;
      const Node& node = nodes_[v.node];
      if (node.count > 0) {
        for (int k = node.first; k < node.first + node.count; ++k) {
          const int tri = tri_order_[k];
          const auto& tv = mesh_.triangles[tri];
          const auto isect = intersect_triangle(ray.origin, ray.direction, mesh_.vertices[tv[0]],
                                                mesh_.vertices[tv[1]], mesh_.vertices[tv[2]]);
          if (isect && (isect->t < best_t || (isect->t == best_t && tri < best_tri))) {
            best_t = isect->t;
            best_tri = tri;
          }
        }
        continue;
      }
      double e_left, e_right;
      const bool h_left = slab_hit(nodes_[node.left].box, ray.origin, inv_dir, e_left);
      const bool h_right = slab_hit(nodes_[node.right].box, ray.origin, inv_dir, e_right);
      if (h_left && h_right) {
        // near child on top of the stack
        if (e_left <= e_right) {
          stack[sp++] = {node.right, e_right};
          stack[sp++] = {node.left, e_left};
        } else {
          stack[sp++] = {node.left, e_left};
          stack[sp++] = {node.right, e_right};
        }
      } else if (h_left) {
        stack[sp++] = {node.left, e_left};
      } else if (h_right) {
        stack[sp++] = {node.right, e_right};
      }
    }

    if (best_tri == std::numeric_limits<int>::max()) return std::nullopt;
    Hit hit;
    hit.t = best_t;
    hit.tri_id = best_tri;
    hit.point = ray.origin + best_t * ray.direction;
    hit.normal = mesh_.tri_normals[best_tri];
    return hit;
  }

 private:
  static bool slab_hit(const Aabb& box, const Vec3& origin, const Vec3& inv_dir, double& entry) {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
      const double ta = (box.lo[k] - origin[k]) * inv_dir[k];
      const double tb = (box.hi[k] - origin[k]) * inv_dir[k];
      // 0 * inf -> NaN when the origin sits exactly on a slab plane with a
      // zero direction component; the ray then grazes that plane for all t,
      // so the axis imposes no constraint.
      if (std::isnan(ta) || std::isnan(tb)) continue;
      t0 = std::fmax(t0, std::fmin(ta, tb));
      t1 = std::fmin(t1, std::fmax(ta, tb));
    }
    entry = t0;
    return t0 <= t1;
  }

  int build(int first, int count) {
    const int node_id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Aabb box;
    Aabb cbox;
    for (int k = first; k < first + count; ++k) {
      box.expand(tri_boxes_[tri_order_[k]]);
      cbox.expand(centroids_[tri_order_[k]]);
    }
    nodes_[node_id].box = box;
    if (count <= kLeafSize) {
      nodes_[node_id].first = first;
      nodes_[node_id].count = count;
      return node_id;
    }
    const Vec3 ext = cbox.extent();
    int axis = 0;
    if (ext.y() > ext[axis]) axis = 1;
    if (ext.z() > ext[axis]) axis = 2;
    const int mid = first + count / 2;
    std::nth_element(tri_order_.begin() + first, tri_order_.begin() + mid,
                     tri_order_.begin() + first + count, [&](int a, int b) {
                       const double ca = centroids_[a][axis];
                       const double cb = centroids_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const int left = build(first, mid - first);
    const int right = build(mid, first + count - mid);
    nodes_[node_id].left = left;
    nodes_[node_id].right = right;
    return node_id;
  }

  static constexpr int kLeafSize = 4;

  TriangleMesh mesh_;
  std::vector<Node> nodes_;
  std::vector<int> tri_order_;
  std::vector<Vec3> centroids_;
  std::vector<Aabb> tri_boxes_;
};

inline MeshAccel build_accel(TriangleMesh mesh) { return MeshAccel(std::move(mesh)); }

inline std::optional<Hit> raycast(const MeshAccel& accel, const Ray& ray) {
  return accel.raycast(ray);
}

}  // namespace scanrl
