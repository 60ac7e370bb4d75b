#include "compav/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "compav/errors.hpp"
#include "compav/rng.hpp"

namespace compav {

namespace {

constexpr double kHalfHeight = 0.6;
constexpr double kRadius = 0.38;

// Superellipse profile: polar parameter in (0, π) → (height, radius).
std::pair<double, double> profile(double polar) {
  const double c = std::cos(polar), s = std::sin(polar);
  const double y = -kHalfHeight * std::copysign(std::sqrt(std::abs(c)), c);
  const double r = kRadius * std::sqrt(std::abs(s));
  return {y, r};
}

}  // namespace

BodyModel make_toy_model(const ToyModelOptions& o) {
  if (o.joints < 1 || o.joints > 4) throw ParameterError("toy model supports 1..4 joints");
  if (o.segments < 4 || o.segments % 2 != 0) throw ParameterError("toy model segments must be even and >= 4");
  if (o.rings < 3) throw ParameterError("toy model needs at least 3 rings");
  const int rings = o.rings, seg = o.segments;
  const int nv = rings * seg + 2;
  const int bottom = rings * seg, top = rings * seg + 1;
  const double pi = std::numbers::pi;

  BodyModel m;
  m.template_vertices.resize(nv, 3);
  std::vector<double> polar(static_cast<std::size_t>(rings)), phi(static_cast<std::size_t>(seg));
  for (int j = 0; j < seg; ++j) phi[j] = -pi + 2.0 * pi * j / seg;
  for (int r = 0; r < rings; ++r) {
    polar[r] = pi * (r + 1) / (rings + 1);
    const auto [y, rad] = profile(polar[r]);
    for (int j = 0; j < seg; ++j)
      m.template_vertices.row(r * seg + j) << rad * std::sin(phi[j]), y, rad * std::cos(phi[j]);
  }
  m.template_vertices.row(bottom) << 0.0, -kHalfHeight, 0.0;
  m.template_vertices.row(top) << 0.0, kHalfHeight, 0.0;

  // Faces, outward winding. UV columns j = 0..seg (seam duplicated at u = 1).
  const int uv_cols = seg + 1;
  m.uvs.resize(rings * uv_cols + 2 * seg, 2);
  for (int r = 0; r < rings; ++r)
    for (int j = 0; j <= seg; ++j) m.uvs.row(r * uv_cols + j) << static_cast<double>(j) / seg, polar[r] / pi;
  const int pole_uv = rings * uv_cols;
  for (int j = 0; j < seg; ++j) {
    m.uvs.row(pole_uv + j) << (j + 0.5) / seg, 0.0;
    m.uvs.row(pole_uv + seg + j) << (j + 0.5) / seg, 1.0;
  }
  const int nt = 2 * seg * (rings - 1) + 2 * seg;
  m.faces.resize(nt, 3);
  m.uv_faces.resize(nt, 3);
  int f = 0;
  auto vid = [&](int r, int j) { return r * seg + (j % seg); };
  auto uid = [&](int r, int j) { return r * uv_cols + j; };
  for (int r = 0; r + 1 < rings; ++r) {
    for (int j = 0; j < seg; ++j) {
      // ring r is below ring r+1
      m.faces.row(f) << vid(r, j), vid(r, j + 1), vid(r + 1, j + 1);
      m.uv_faces.row(f++) << uid(r, j), uid(r, j + 1), uid(r + 1, j + 1);
      m.faces.row(f) << vid(r, j), vid(r + 1, j + 1), vid(r + 1, j);
      m.uv_faces.row(f++) << uid(r, j), uid(r + 1, j + 1), uid(r + 1, j);
    }
  }
  for (int j = 0; j < seg; ++j) {
    m.faces.row(f) << bottom, vid(0, j + 1), vid(0, j);
    m.uv_faces.row(f++) << pole_uv + j, uid(0, j + 1), uid(0, j);
    m.faces.row(f) << top, vid(rings - 1, j), vid(rings - 1, j + 1);
    m.uv_faces.row(f++) << pole_uv + seg + j, uid(rings - 1, j), uid(rings - 1, j + 1);
  }

  // Joints: centroids of rings spread from the lower quarter up to ~70%.
  const int nk = o.joints;
  m.parents.resize(nk);
  m.joint_regressor = MatX::Zero(nk, nv);
  std::vector<double> joint_height(nk);
  for (int k = 0; k < nk; ++k) {
    m.parents[k] = k - 1;
    const double frac = nk == 1 ? 0.5 : 0.25 + 0.45 * k / (nk - 1);
    const int ring = std::clamp(static_cast<int>(std::lround(frac * (rings - 1))), 0, rings - 1);
    for (int j = 0; j < seg; ++j) m.joint_regressor(k, ring * seg + j) = 1.0 / seg;
    joint_height[k] = profile(polar[ring]).first;
  }

  // Piecewise-linear weights along y between consecutive joints.
  m.skin_weights = MatX::Zero(nk, nv);
  for (int i = 0; i < nv; ++i) {
    const double y = m.template_vertices(i, 1);
    if (nk == 1 || y <= joint_height[0]) {
      m.skin_weights(0, i) = 1.0;
      continue;
    }
    if (y >= joint_height[nk - 1]) {
      m.skin_weights(nk - 1, i) = 1.0;
      continue;
    }
    for (int k = 0; k + 1 < nk; ++k) {
      if (y >= joint_height[k] && y < joint_height[k + 1]) {
        const double t = (y - joint_height[k]) / (joint_height[k + 1] - joint_height[k]);
        m.skin_weights(k, i) = 1.0 - t;
        m.skin_weights(k + 1, i) = t;
      }
    }
  }

  // Shape basis: axis scalings first (column 0 widens along x), then smooth
  // radial harmonics.
  Rng rng(o.seed);
  m.shape_basis = MatX::Zero(3 * nv, o.shape);
  for (int i = 0; i < nv; ++i) {
    const Vec3 p = m.template_vertices.row(i).transpose();
    const double s = p.y() / kHalfHeight;
    const double az = std::atan2(p.x(), p.z());
    Vec3 radial(p.x(), 0.0, p.z());
    const double rn = radial.norm();
    radial = rn > 1e-9 ? Vec3(radial / rn) : Vec3::Zero();
    for (int b = 0; b < o.shape; ++b) {
      Vec3 d = Vec3::Zero();
      if (b == 0) d = Vec3(0.08 * p.x(), 0.0, 0.0);
      else if (b == 1) d = Vec3(0.0, 0.05 * p.y(), 0.0);
      else if (b == 2) d = Vec3(0.0, 0.0, 0.08 * p.z());
      else {
        const int h = b - 3;
        const int mode = h % 4 + 1;
        const int order = h / 4 + 1;
        const double phase = (h % 2 == 0) ? 0.0 : std::numbers::pi / 2.0;
        const double amp = 0.03 * std::cos(mode * az + phase) * std::cos(order * 0.5 * std::numbers::pi * s) * rn / kRadius;
        d = amp * radial + Vec3(0.0, 0.01 * std::sin(order * std::numbers::pi * s) * std::cos(mode * az), 0.0);
      }
      m.shape_basis.block<3, 1>(3 * i, b) = d;
    }
  }

  // Expression basis: smooth bumps on the front (+z) half. Column 0 lifts the
  // upper front region (brow/forehead) and extends onto the scalp.
  m.expression_basis = MatX::Zero(3 * nv, o.expression);
  for (int i = 0; i < nv; ++i) {
    const Vec3 p = m.template_vertices.row(i).transpose();
    const double front = std::max(0.0, p.z() / kRadius);
    for (int e = 0; e < o.expression; ++e) {
      Vec3 d = Vec3::Zero();
      if (e == 0) {
        const double w = std::exp(-std::pow((p.y() - 0.3) / 0.25, 2)) * (0.5 + 0.5 * front);
        d = Vec3(0.0, 0.04 * w, 0.0);
      } else if (e == 1) {
        const double w = std::exp(-std::pow((p.y() + 0.3) / 0.15, 2)) * front;
        d = Vec3(0.0, -0.05 * w, 0.01 * w);
      } else {
        const double cy = -0.2 + 0.4 * (e - 2) / std::max(1, o.expression - 2);
        const double w = std::exp(-std::pow((p.y() - cy) / 0.12, 2)) * front * front;
        d = Vec3(0.02 * w * p.x() / kRadius, 0.0, 0.02 * w);
      }
      m.expression_basis.block<3, 1>(3 * i, e) = d;
    }
  }

  // Pose correctives: small random smooth fields per feature.
  m.pose_basis = MatX::Zero(3 * nv, o.pose_correctives && nk > 1 ? 9 * (nk - 1) : 0);
  for (int c = 0; c < m.pose_basis.cols(); ++c) {
    const Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    const double freq = rng.uniform(0.5, 2.0);
    for (int i = 0; i < nv; ++i) {
      const double y = m.template_vertices(i, 1);
      m.pose_basis.block<3, 1>(3 * i, c) = 0.005 * std::cos(freq * 3.0 * y) * dir;
    }
  }

  m.canonical_pose = VecX::Zero(3 * nk + 3);
  if (nk > 1) m.canonical_pose[3 * 1 + 2] = o.canonical_bend;

  // Landmarks spread over the front half, lower 80% of the height.
  std::vector<int> candidates;
  for (int r = 1; r < rings - 1; ++r) {
    if (profile(polar[r]).first > 0.35) continue;
    for (int j = 0; j < seg; ++j)
      if (std::abs(phi[j]) <= pi / 2.0 + 1e-9) candidates.push_back(r * seg + j);
  }
  const int count = std::min<int>(o.landmarks, static_cast<int>(candidates.size()));
  for (int l = 0; l < count; ++l) {
    const auto idx = static_cast<std::size_t>(static_cast<long>(l) * static_cast<long>(candidates.size()) / count);
    char name[16];
    std::snprintf(name, sizeof name, "lm_%02d", l);
    m.landmarks.push_back({name, candidates[idx]});
  }

  m.validate();
  return m;
}

}  // namespace compav
