#include "compav/bvh.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace compav {

std::optional<RayHit> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c, int face,
                                         double t_min) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = ray.direction.cross(e2);
  const double det = e1.dot(p);
  const double scale = e1.norm() * e2.norm();
  if (std::abs(det) <= 1e-12 * scale) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = ray.origin - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (!(t > t_min)) return std::nullopt;
  return RayHit{t, face, Vec3(1.0 - u - v, u, v)};
}

MeshBvh::MeshBvh(const Mesh& mesh) : vertices_(mesh.vertices), faces_(mesh.faces) {
  const int n = static_cast<int>(faces_.rows());
  if (n == 0) return;
  order_.resize(static_cast<std::size_t>(n));
  std::iota(order_.begin(), order_.end(), 0);
  std::vector<Vec3> centroids(static_cast<std::size_t>(n));
  for (int f = 0; f < n; ++f)
    centroids[f] = (vertices_.row(faces_(f, 0)) + vertices_.row(faces_(f, 1)) + vertices_.row(faces_(f, 2))).transpose() / 3.0;
  nodes_.reserve(static_cast<std::size_t>(2 * n));
  build(0, n, centroids);
}

int MeshBvh::build(int begin, int end, std::vector<Vec3>& centroids) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Eigen::AlignedBox3d box;
  Eigen::AlignedBox3d cbox;
  for (int i = begin; i < end; ++i) {
    const int f = order_[i];
    for (int c = 0; c < 3; ++c) box.extend(vertices_.row(faces_(f, c)).transpose());
    cbox.extend(centroids[f]);
  }
  nodes_[index].box = box;
  if (end - begin <= 4) {
    nodes_[index].begin = begin;
    nodes_[index].end = end;
    return index;
  }
  int axis;
  cbox.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return centroids[a][axis] < centroids[b][axis]; });
  const int left = build(begin, mid, centroids);
  const int right = build(mid, end, centroids);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

namespace {

// Slab test; returns entry distance or +inf on miss.
double box_entry(const Eigen::AlignedBox3d& box, const Ray& ray, const Vec3& inv_dir, double t_max) {
  double t0 = 0.0, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    double lo = (box.min()[a] - ray.origin[a]) * inv_dir[a];
    double hi = (box.max()[a] - ray.origin[a]) * inv_dir[a];
    if (lo > hi) std::swap(lo, hi);
    if (std::isnan(lo) || std::isnan(hi)) {
      // direction component is zero and origin lies on a slab plane
      if (ray.origin[a] < box.min()[a] || ray.origin[a] > box.max()[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi * (1.0 + 4e-16));
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}

}  // namespace

std::optional<RayHit> MeshBvh::intersect(const Ray& ray, double t_min) const {
  if (nodes_.empty()) return std::nullopt;
  const Vec3 inv_dir = ray.direction.cwiseInverse();
  std::optional<RayHit> best;
  double best_t = std::numeric_limits<double>::infinity();
  int stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[static_cast<std::size_t>(stack[--top])];
    if (box_entry(node.box, ray, inv_dir, best_t) > best_t) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int f = order_[i];
        auto hit = intersect_triangle(ray, vertices_.row(faces_(f, 0)).transpose(), vertices_.row(faces_(f, 1)).transpose(),
                                      vertices_.row(faces_(f, 2)).transpose(), f, t_min);
        if (hit && (hit->t < best_t || (hit->t == best_t && hit->face < best->face))) {
          best_t = hit->t;
          best = hit;
        }
      }
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
  return best;
}

std::optional<RayHit> intersect_first(const Ray& ray, const Mesh& mesh) { return MeshBvh(mesh).intersect(ray); }

}  // namespace compav
