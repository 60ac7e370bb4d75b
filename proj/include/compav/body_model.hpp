#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "compav/mesh.hpp"
#include "compav/types.hpp"

namespace compav {

struct LandmarkCorrespondence {
  std::string name;
  int vertex = 0;
};

// Parametric mesh model: template + shape/expression/pose blendshapes, joint
// regressor and linear blend skinning weights. Immutable once validated.
//
// Pose vector layout (length 3·n_k + 3): one axis-angle triple per joint in
// kinematic order (joint 0 is the root, so its triple is the global
// orientation), followed by a global translation. Joint rotations are taken
// relative to the stored canonical pose: the local rotation of joint k is
// R(θ_k)·R(θ^c_k)ᵀ, so the template is reproduced exactly at θ = θ^c.
struct BodyModel {
  Points template_vertices;  // n_v × 3, authored in the canonical pose
  Faces faces;               // n_t × 3
  UVs uvs;                   // n_uv × 2 (optional)
  Faces uv_faces;            // n_t × 3 into uvs (optional)
  MatX shape_basis;          // 3n_v × |β|, rows x0 y0 z0 x1 ...
  MatX expression_basis;     // 3n_v × |ψ|
  MatX pose_basis;           // 3n_v × 9(n_k−1), or 3n_v × 0 when disabled
  MatX joint_regressor;      // n_k × n_v
  MatX skin_weights;         // n_k × n_v, each column sums to one
  std::vector<int> parents;  // parents[0] == -1, parents[k] < k otherwise
  VecX canonical_pose;       // θ^c
  std::vector<LandmarkCorrespondence> landmarks;

  int num_vertices() const { return static_cast<int>(template_vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }
  int num_joints() const { return static_cast<int>(parents.size()); }
  int num_shape() const { return static_cast<int>(shape_basis.cols()); }
  int num_expression() const { return static_cast<int>(expression_basis.cols()); }
  int pose_size() const { return 3 * num_joints() + 3; }
  int pose_feature_size() const { return 9 * (num_joints() - 1); }
  bool has_pose_correctives() const { return pose_basis.cols() > 0; }

  Mesh template_mesh() const;
  int landmark_vertex(const std::string& name) const;  // -1 if unknown

  // Structural and numeric checks; throws LoadError naming the field.
  void validate() const;
};

struct AvatarParams {
  VecX beta;
  VecX theta;
  VecX psi;

  // β = 0, θ = θ^c, ψ = 0.
  static AvatarParams rest(const BodyModel& model);
  bool operator==(const AvatarParams& o) const {
    return beta == o.beta && theta == o.theta && psi == o.psi;
  }
};

// Throws ParameterError on size mismatch or non-finite values.
void check_params(const BodyModel& model, const AvatarParams& params);

// Per-vertex 4×4 world transforms M_i, mapping template position t_i to the
// posed vertex v_i.
struct VertexTransforms {
  std::vector<Mat4> matrices;

  std::size_t size() const { return matrices.size(); }
  const Mat4& operator[](std::size_t i) const { return matrices[i]; }
};

// Forward-kinematics state for one parameter set.
struct SkeletonState {
  Points rest_joints;                // J(β)
  std::vector<Mat3> local_rotation;  // relative to θ^c
  std::vector<Mat3> world_rotation;
  Points world_joints;               // posed joint positions
  std::vector<Mat4> skinning;        // G_k · translate(−J_k)
};

Mat3 axis_angle_to_matrix(const Vec3& v);
// ∂R/∂v_a for a = 0, 1, 2.
std::array<Mat3, 3> axis_angle_jacobian(const Vec3& v);
Vec3 matrix_to_axis_angle(const Mat3& r);

Points joint_positions(const BodyModel& model, const VecX& beta);
SkeletonState pose_skeleton(const BodyModel& model, const AvatarParams& params);
// B(β, θ, ψ) as n_v × 3 offsets.
Points blend_offsets(const BodyModel& model, const AvatarParams& params, const SkeletonState& skeleton);
VertexTransforms vertex_transforms(const BodyModel& model, const AvatarParams& params);
Mesh skin_mesh(const BodyModel& model, const AvatarParams& params);

// Posed positions for a subset of vertices (rows follow `ids`).
Points skin_vertices(const BodyModel& model, const AvatarParams& params, std::span<const int> ids);

struct ParamGradient {
  VecX beta;
  VecX theta;
  VecX psi;
};

// Vector-Jacobian product of skin_vertices: given ∂L/∂v for the listed
// vertices, returns ∂L/∂(β, θ, ψ).
ParamGradient skin_vertices_vjp(const BodyModel& model, const AvatarParams& params,
                                std::span<const int> ids, const Points& grad_vertices);

}  // namespace compav
