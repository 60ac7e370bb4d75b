#include "compav/body_model.hpp"

#include <cmath>
#include <cstdio>

#include "compav/errors.hpp"

namespace compav {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return k;
}

bool all_finite(const VecX& v) { return v.allFinite(); }

// Local rotation of joint k relative to the canonical pose.
Mat3 relative_rotation(const Vec3& theta, const Vec3& canonical) {
  if (theta == canonical) return Mat3::Identity();
  return axis_angle_to_matrix(theta) * axis_angle_to_matrix(canonical).transpose();
}

// Offsets B_i for one vertex.
Vec3 vertex_offset(const BodyModel& model, const AvatarParams& params, const VecX& pose_feature, int i) {
  Vec3 b = model.shape_basis.middleRows(3 * i, 3) * params.beta;
  if (model.num_expression() > 0) b += model.expression_basis.middleRows(3 * i, 3) * params.psi;
  if (model.has_pose_correctives()) b += model.pose_basis.middleRows(3 * i, 3) * pose_feature;
  return b;
}

VecX pose_feature(const BodyModel& model, const SkeletonState& skel) {
  VecX f(model.pose_feature_size());
  for (int k = 1; k < model.num_joints(); ++k) {
    const Mat3 d = skel.local_rotation[k] - Mat3::Identity();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) f[9 * (k - 1) + 3 * r + c] = d(r, c);
  }
  return f;
}

// Blend of per-joint skinning transforms for vertex i (top 3×4 only).
Eigen::Matrix<double, 3, 4> blended_skinning(const BodyModel& model, const SkeletonState& skel, int i) {
  Eigen::Matrix<double, 3, 4> a = Eigen::Matrix<double, 3, 4>::Zero();
  for (int k = 0; k < model.num_joints(); ++k) {
    const double w = model.skin_weights(k, i);
    if (w != 0.0) a += w * skel.skinning[k].topRows<3>();
  }
  return a;
}

}  // namespace

Mesh BodyModel::template_mesh() const {
  Mesh m;
  m.vertices = template_vertices;
  m.faces = faces;
  m.uvs = uvs;
  m.uv_faces = uv_faces;
  return m;
}

int BodyModel::landmark_vertex(const std::string& name) const {
  for (const auto& l : landmarks)
    if (l.name == name) return l.vertex;
  return -1;
}

void BodyModel::validate() const {
  const int nv = num_vertices();
  const int nk = num_joints();
  auto fail = [](const std::string& msg) { throw LoadError(msg); };
  if (nv == 0) fail("template_vertices is empty");
  if (nk == 0) fail("kinematic_parents is empty");
  if (!template_vertices.allFinite()) fail("template_vertices contains non-finite values");
  for (int f = 0; f < num_faces(); ++f)
    for (int c = 0; c < 3; ++c)
      if (faces(f, c) < 0 || faces(f, c) >= nv)
        fail("faces row " + std::to_string(f) + " references vertex " + std::to_string(faces(f, c)) +
             " outside [0, " + std::to_string(nv) + ")");
  if (uv_faces.rows() != 0 || uvs.rows() != 0) {
    if (uv_faces.rows() != faces.rows()) fail("uv_faces row count does not match faces");
    for (int f = 0; f < uv_faces.rows(); ++f)
      for (int c = 0; c < 3; ++c)
        if (uv_faces(f, c) < 0 || uv_faces(f, c) >= uvs.rows())
          fail("uv_faces row " + std::to_string(f) + " references uv " + std::to_string(uv_faces(f, c)));
  }
  if (shape_basis.rows() != 3 * nv) fail("shape_basis must have 3·n_v rows");
  if (expression_basis.rows() != 3 * nv && expression_basis.size() != 0)
    fail("expression_basis must have 3·n_v rows");
  if (pose_basis.cols() != 0 && (pose_basis.rows() != 3 * nv || pose_basis.cols() != pose_feature_size()))
    fail("pose_basis must be 3·n_v × 9(n_k−1) or empty");
  if (joint_regressor.rows() != nk || joint_regressor.cols() != nv) fail("joint_regressor must be n_k × n_v");
  if (skin_weights.rows() != nk || skin_weights.cols() != nv) fail("skin_weights must be n_k × n_v");
  if (!shape_basis.allFinite() || !expression_basis.allFinite() || !pose_basis.allFinite())
    fail("blendshape basis contains non-finite values");
  if (!joint_regressor.allFinite()) fail("joint_regressor contains non-finite values");
  for (int i = 0; i < nv; ++i) {
    double sum = 0.0;
    for (int k = 0; k < nk; ++k) {
      const double w = skin_weights(k, i);
      if (!(w >= 0.0)) fail("skin_weights column " + std::to_string(i) + " has negative entry");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%g", sum);
      fail("skin_weights column " + std::to_string(i) + " sums to " + buf);
    }
  }
  if (parents[0] != -1) fail("kinematic_parents[0] must be -1 (single root)");
  for (int k = 1; k < nk; ++k)
    if (parents[k] < 0 || parents[k] >= k)
      fail("kinematic_parents[" + std::to_string(k) + "] must reference an earlier joint");
  if (canonical_pose.size() != pose_size()) fail("canonical_pose must have 3·n_k+3 entries");
  if (!canonical_pose.allFinite()) fail("canonical_pose contains non-finite values");
  for (const auto& l : landmarks)
    if (l.vertex < 0 || l.vertex >= nv) fail("landmark '" + l.name + "' references an invalid vertex");
}

AvatarParams AvatarParams::rest(const BodyModel& model) {
  return {VecX::Zero(model.num_shape()), model.canonical_pose, VecX::Zero(model.num_expression())};
}

void check_params(const BodyModel& model, const AvatarParams& params) {
  if (params.beta.size() != model.num_shape())
    throw ParameterError("beta has " + std::to_string(params.beta.size()) + " entries, model expects " +
                         std::to_string(model.num_shape()));
  if (params.theta.size() != model.pose_size())
    throw ParameterError("theta has " + std::to_string(params.theta.size()) + " entries, model expects " +
                         std::to_string(model.pose_size()));
  if (params.psi.size() != model.num_expression())
    throw ParameterError("psi has " + std::to_string(params.psi.size()) + " entries, model expects " +
                         std::to_string(model.num_expression()));
  if (!all_finite(params.beta) || !all_finite(params.theta) || !all_finite(params.psi))
    throw ParameterError("avatar parameters contain non-finite values");
}

Mat3 axis_angle_to_matrix(const Vec3& v) {
  const double th2 = v.squaredNorm();
  const Mat3 k = skew(v);
  double a, b;
  if (th2 < 1e-12) {
    a = 1.0 - th2 / 6.0;
    b = 0.5 - th2 / 24.0;
  } else {
    const double th = std::sqrt(th2);
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / th2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

std::array<Mat3, 3> axis_angle_jacobian(const Vec3& v) {
  std::array<Mat3, 3> out;
  const double th2 = v.squaredNorm();
  const Mat3 k = skew(v);
  if (th2 < 1e-12) {
    for (int a = 0; a < 3; ++a) {
      const Mat3 e = skew(Vec3::Unit(a));
      out[a] = e + 0.5 * (e * k + k * e);
    }
    return out;
  }
  // Gallego & Yezzi closed form.
  const Mat3 r = axis_angle_to_matrix(v);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int a = 0; a < 3; ++a) {
    const Vec3 col = v.cross(i_minus_r.col(a));
    out[a] = (v[a] * k + skew(col)) * r / th2;
  }
  return out;
}

Vec3 matrix_to_axis_angle(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Points joint_positions(const BodyModel& model, const VecX& beta) {
  if (beta.size() != model.num_shape())
    throw ParameterError("beta has " + std::to_string(beta.size()) + " entries, model expects " +
                         std::to_string(model.num_shape()));
  const int nk = model.num_joints();
  Points joints = Points::Zero(nk, 3);
  for (int v = 0; v < model.num_vertices(); ++v) {
    bool used = false;
    for (int k = 0; k < nk; ++k) used |= model.joint_regressor(k, v) != 0.0;
    if (!used) continue;
    const Vec3 shaped = model.template_vertices.row(v).transpose() + model.shape_basis.middleRows(3 * v, 3) * beta;
    for (int k = 0; k < nk; ++k) {
      const double r = model.joint_regressor(k, v);
      if (r != 0.0) joints.row(k) += r * shaped.transpose();
    }
  }
  return joints;
}

SkeletonState pose_skeleton(const BodyModel& model, const AvatarParams& params) {
  check_params(model, params);
  const int nk = model.num_joints();
  SkeletonState s;
  s.rest_joints = joint_positions(model, params.beta);
  s.local_rotation.resize(nk);
  s.world_rotation.resize(nk);
  s.world_joints.resize(nk, 3);
  s.skinning.resize(nk);
  const Vec3 translation = params.theta.tail<3>();
  for (int k = 0; k < nk; ++k) {
    s.local_rotation[k] = relative_rotation(params.theta.segment<3>(3 * k), model.canonical_pose.segment<3>(3 * k));
    const Vec3 jk = s.rest_joints.row(k).transpose();
    if (k == 0) {
      s.world_rotation[0] = s.local_rotation[0];
      s.world_joints.row(0) = (jk + translation).transpose();
    } else {
      const int p = model.parents[k];
      const Vec3 jp = s.rest_joints.row(p).transpose();
      s.world_rotation[k] = s.world_rotation[p] * s.local_rotation[k];
      s.world_joints.row(k) = s.world_joints.row(p) + (s.world_rotation[p] * (jk - jp)).transpose();
    }
    Mat4 a = Mat4::Identity();
    a.topLeftCorner<3, 3>() = s.world_rotation[k];
    a.topRightCorner<3, 1>() = s.world_joints.row(k).transpose() - s.world_rotation[k] * jk;
    s.skinning[k] = a;
  }
  return s;
}

Points blend_offsets(const BodyModel& model, const AvatarParams& params, const SkeletonState& skeleton) {
  const int nv = model.num_vertices();
  VecX flat = model.shape_basis * params.beta;
  if (model.num_expression() > 0) flat += model.expression_basis * params.psi;
  if (model.has_pose_correctives()) flat += model.pose_basis * pose_feature(model, skeleton);
  return Eigen::Map<const Points>(flat.data(), nv, 3);
}

VertexTransforms vertex_transforms(const BodyModel& model, const AvatarParams& params) {
  const SkeletonState skel = pose_skeleton(model, params);
  const Points offsets = blend_offsets(model, params, skel);
  VertexTransforms out;
  out.matrices.resize(model.num_vertices());
  for (int i = 0; i < model.num_vertices(); ++i) {
    const Eigen::Matrix<double, 3, 4> a = blended_skinning(model, skel, i);
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = a.leftCols<3>();
    m.topRightCorner<3, 1>() = a.leftCols<3>() * offsets.row(i).transpose() + a.col(3);
    out.matrices[i] = m;
  }
  return out;
}

Mesh skin_mesh(const BodyModel& model, const AvatarParams& params) {
  const VertexTransforms transforms = vertex_transforms(model, params);
  Mesh mesh = model.template_mesh();
  for (int i = 0; i < model.num_vertices(); ++i) {
    const Vec4 t(model.template_vertices(i, 0), model.template_vertices(i, 1), model.template_vertices(i, 2), 1.0);
    mesh.vertices.row(i) = (transforms[i] * t).head<3>().transpose();
  }
  return mesh;
}

Points skin_vertices(const BodyModel& model, const AvatarParams& params, std::span<const int> ids) {
  const SkeletonState skel = pose_skeleton(model, params);
  const VecX feature = model.has_pose_correctives() ? pose_feature(model, skel) : VecX();
  Points out(static_cast<Eigen::Index>(ids.size()), 3);
  for (std::size_t m = 0; m < ids.size(); ++m) {
    const int i = ids[m];
    if (i < 0 || i >= model.num_vertices()) throw ParameterError("vertex index out of range");
    const Vec3 p = model.template_vertices.row(i).transpose() + vertex_offset(model, params, feature, i);
    const Eigen::Matrix<double, 3, 4> a = blended_skinning(model, skel, i);
    out.row(static_cast<Eigen::Index>(m)) = (a.leftCols<3>() * p + a.col(3)).transpose();
  }
  return out;
}

ParamGradient skin_vertices_vjp(const BodyModel& model, const AvatarParams& params, std::span<const int> ids,
                                const Points& grad_vertices) {
  if (grad_vertices.rows() != static_cast<Eigen::Index>(ids.size()))
    throw ParameterError("gradient rows must match vertex ids");
  const SkeletonState skel = pose_skeleton(model, params);
  const int nk = model.num_joints();
  const VecX feature = model.has_pose_correctives() ? pose_feature(model, skel) : VecX();

  std::vector<Mat3> g_world_rot(nk, Mat3::Zero());
  std::vector<Mat3> g_local_rot(nk, Mat3::Zero());
  Points g_rest_joints = Points::Zero(nk, 3);
  Points g_world_joints = Points::Zero(nk, 3);
  ParamGradient g{VecX::Zero(model.num_shape()), VecX::Zero(model.pose_size()), VecX::Zero(model.num_expression())};
  VecX g_feature = VecX::Zero(model.has_pose_correctives() ? model.pose_feature_size() : 0);

  for (std::size_t m = 0; m < ids.size(); ++m) {
    const int i = ids[m];
    const Vec3 gv = grad_vertices.row(static_cast<Eigen::Index>(m)).transpose();
    const Vec3 p = model.template_vertices.row(i).transpose() + vertex_offset(model, params, feature, i);
    Vec3 gp = Vec3::Zero();
    for (int k = 0; k < nk; ++k) {
      const double w = model.skin_weights(k, i);
      if (w == 0.0) continue;
      const Vec3 jk = skel.rest_joints.row(k).transpose();
      const Vec3 rt_gv = skel.world_rotation[k].transpose() * gv;
      gp += w * rt_gv;
      g_world_rot[k] += w * gv * (p - jk).transpose();
      g_rest_joints.row(k) -= w * rt_gv.transpose();
      g_world_joints.row(k) += w * gv.transpose();
    }
    g.beta += model.shape_basis.middleRows(3 * i, 3).transpose() * gp;
    if (model.num_expression() > 0) g.psi += model.expression_basis.middleRows(3 * i, 3).transpose() * gp;
    if (model.has_pose_correctives()) g_feature += model.pose_basis.middleRows(3 * i, 3).transpose() * gp;
  }

  for (int k = 1; k < nk && g_feature.size() > 0; ++k)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) g_local_rot[k](r, c) += g_feature[9 * (k - 1) + 3 * r + c];

  // Reverse sweep over the kinematic chain (children have larger indices).
  for (int k = nk - 1; k >= 1; --k) {
    const int p = model.parents[k];
    const Vec3 gg = g_world_joints.row(k).transpose();
    const Vec3 jk = skel.rest_joints.row(k).transpose();
    const Vec3 jp = skel.rest_joints.row(p).transpose();
    const Mat3& rp = skel.world_rotation[p];
    g_world_rot[p] += gg * (jk - jp).transpose();
    const Vec3 rp_gg = rp.transpose() * gg;
    g_rest_joints.row(k) += rp_gg.transpose();
    g_rest_joints.row(p) -= rp_gg.transpose();
    g_world_joints.row(p) += gg.transpose();
    g_world_rot[p] += g_world_rot[k] * skel.local_rotation[k].transpose();
    g_local_rot[k] += rp.transpose() * g_world_rot[k];
  }
  g_local_rot[0] += g_world_rot[0];
  g_rest_joints.row(0) += g_world_joints.row(0);
  g.theta.tail<3>() = g_world_joints.row(0).transpose();

  for (int k = 0; k < nk; ++k) {
    const Vec3 th = params.theta.segment<3>(3 * k);
    const Mat3 rc_t = axis_angle_to_matrix(model.canonical_pose.segment<3>(3 * k)).transpose();
    const auto jac = axis_angle_jacobian(th);
    for (int a = 0; a < 3; ++a) g.theta[3 * k + a] = g_local_rot[k].cwiseProduct(jac[a] * rc_t).sum();
  }

  // J(β) = regressor · (T + S β)
  for (int v = 0; v < model.num_vertices(); ++v) {
    Vec3 gj = Vec3::Zero();
    for (int k = 0; k < nk; ++k) {
      const double r = model.joint_regressor(k, v);
      if (r != 0.0) gj += r * g_rest_joints.row(k).transpose();
    }
    if (!gj.isZero(0.0)) g.beta += model.shape_basis.middleRows(3 * v, 3).transpose() * gj;
  }
  return g;
}

}  // namespace compav
