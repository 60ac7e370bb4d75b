#include "compav/canonical.hpp"

#include <algorithm>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <cmath>
#include <utility>

#include "compav/errors.hpp"

namespace compav {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

using BoostPoint = bg::model::point<double, 3, bg::cs::cartesian>;
using IndexedPoint = std::pair<BoostPoint, int>;

struct PosedBody::Index {
  bgi::rtree<IndexedPoint, bgi::quadratic<16>> tree;
};

namespace {

Mat4 affine_inverse(const Mat4& m) {
  Mat4 inv = Mat4::Identity();
  const Mat3 a = m.topLeftCorner<3, 3>();
  const Mat3 ai = a.inverse();
  inv.topLeftCorner<3, 3>() = ai;
  inv.topRightCorner<3, 1>() = -ai * m.topRightCorner<3, 1>();
  return inv;
}

struct Neighbor {
  double distance;
  int vertex;
};

Vec3 blend(const Vec3& x, const std::vector<Neighbor>& nbrs, const MatX& skin_weights, double tau,
           const std::vector<Mat4>& to_canonical) {
  const int xi = nbrs.front().vertex;
  double total = 0.0;
  Vec3 out = Vec3::Zero();
  const Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
  for (const auto& n : nbrs) {
    const double wdist = (skin_weights.col(xi) - skin_weights.col(n.vertex)).norm();
    const double w = std::exp(-n.distance * wdist / (2.0 * tau * tau));
    total += w;
    out += w * (to_canonical[static_cast<std::size_t>(n.vertex)] * xh).head<3>();
  }
  return out / total;
}

void sort_neighbors(std::vector<Neighbor>& nbrs) {
  std::sort(nbrs.begin(), nbrs.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.vertex < b.vertex);
  });
}

}  // namespace

PosedBody::PosedBody(const BodyModel& model, const AvatarParams& params, const CanonicalFrame& frame)
    : model_(&model), params_(params), frame_(frame), index_(std::make_unique<Index>()) {
  if (frame.neighbors < 1) throw ConfigError("canonical frame: neighbour count must be positive");
  if (!(frame.tau > 0.0)) throw ConfigError("canonical frame: tau must be positive");
  check_params(model, params);
  mesh_ = skin_mesh(model, params);
  bvh_ = MeshBvh(mesh_);
  const VertexTransforms posed = vertex_transforms(model, params);
  const VertexTransforms canon = vertex_transforms(model, AvatarParams::rest(model));
  to_canonical_.resize(posed.size());
  for (std::size_t i = 0; i < posed.size(); ++i) to_canonical_[i] = canon[i] * affine_inverse(posed[i]);

  std::vector<IndexedPoint> pts;
  pts.reserve(static_cast<std::size_t>(mesh_.num_vertices()));
  for (int i = 0; i < mesh_.num_vertices(); ++i) {
    pts.emplace_back(BoostPoint(mesh_.vertices(i, 0), mesh_.vertices(i, 1), mesh_.vertices(i, 2)), i);
    reach_.extend(mesh_.vertices.row(i).transpose());
  }
  index_->tree = bgi::rtree<IndexedPoint, bgi::quadratic<16>>(pts.begin(), pts.end());
  reach_.min().array() -= frame.cutoff;
  reach_.max().array() += frame.cutoff;
}

PosedBody::~PosedBody() = default;
PosedBody::PosedBody(PosedBody&&) noexcept = default;
PosedBody& PosedBody::operator=(PosedBody&&) noexcept = default;

std::optional<Vec3> PosedBody::canonicalize(const Vec3& x, int* nearest) const {
  if (!reach_.contains(x)) return std::nullopt;
  std::vector<Neighbor> nbrs;
  nbrs.reserve(static_cast<std::size_t>(frame_.neighbors));
  const BoostPoint q(x.x(), x.y(), x.z());
  for (auto it = index_->tree.qbegin(bgi::nearest(q, static_cast<unsigned>(frame_.neighbors)));
       it != index_->tree.qend(); ++it)
    nbrs.push_back({(mesh_.vertices.row(it->second).transpose() - x).norm(), it->second});
  sort_neighbors(nbrs);
  if (nbrs.empty() || nbrs.front().distance > frame_.cutoff) return std::nullopt;
  if (nearest) *nearest = nbrs.front().vertex;
  return blend(x, nbrs, model_->skin_weights, frame_.tau, to_canonical_);
}

Vec3 PosedBody::canonicalize_direction(int nearest, const Vec3& d) const {
  return (to_canonical_[static_cast<std::size_t>(nearest)].topLeftCorner<3, 3>() * d).normalized();
}

std::optional<Vec3> canonicalize(const Vec3& x, const Mesh& posed_mesh, const VertexTransforms& transforms,
                                 const VertexTransforms& canon_transforms, const MatX& skin_weights,
                                 const CanonicalFrame& frame) {
  const int nv = posed_mesh.num_vertices();
  if (static_cast<int>(transforms.size()) != nv || static_cast<int>(canon_transforms.size()) != nv ||
      skin_weights.cols() != nv)
    throw ParameterError("canonicalize: mesh, transforms and skin weights disagree on vertex count");
  std::vector<Neighbor> all(static_cast<std::size_t>(nv));
  for (int i = 0; i < nv; ++i) all[static_cast<std::size_t>(i)] = {(posed_mesh.vertices.row(i).transpose() - x).norm(), i};
  sort_neighbors(all);
  all.resize(static_cast<std::size_t>(std::min(nv, frame.neighbors)));
  if (all.empty() || all.front().distance > frame.cutoff) return std::nullopt;
  std::vector<Mat4> to_canonical(static_cast<std::size_t>(nv));
  for (const auto& n : all)
    to_canonical[static_cast<std::size_t>(n.vertex)] = canon_transforms[static_cast<std::size_t>(n.vertex)] *
                                                        affine_inverse(transforms[static_cast<std::size_t>(n.vertex)]);
  return blend(x, all, skin_weights, frame.tau, to_canonical);
}

}  // namespace compav
