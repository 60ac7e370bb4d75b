#pragma once

#include <optional>
#include <vector>

#include "compav/camera.hpp"
#include "compav/mesh.hpp"

namespace compav {

struct RayHit {
  double t = 0.0;    // distance along the (unit) ray direction
  int face = -1;
  Vec3 barycentric;  // weights of the face's three corners
};

// Möller–Trumbore; returns nullopt for misses and rays parallel to the plane.
std::optional<RayHit> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c, int face,
                                         double t_min);

// Bounding volume hierarchy over mesh triangles (median split).
class MeshBvh {
 public:
  MeshBvh() = default;
  explicit MeshBvh(const Mesh& mesh);

  // Nearest hit with t > t_min; equal depths resolve to the lowest face index.
  std::optional<RayHit> intersect(const Ray& ray, double t_min = 1e-9) const;
  bool empty() const { return nodes_.empty(); }

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;   // child index or -1 for leaves
    int right = -1;
    int begin = 0;   // range into order_ for leaves
    int end = 0;
  };
  int build(int begin, int end, std::vector<Vec3>& centroids);

  Points vertices_;
  Faces faces_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

std::optional<RayHit> intersect_first(const Ray& ray, const Mesh& mesh);

}  // namespace compav
