#pragma once

#include <memory>
#include <optional>

#include "compav/body_model.hpp"
#include "compav/bvh.hpp"

namespace compav {

struct CanonicalFrame {
  int neighbors = 6;
  double tau = 0.1;
  double cutoff = 0.5;  // points farther than this from the mesh are empty space
};

// Observation → canonical mapping for one parameter set. The canonical frame
// is the space of M_i(0, θ^c, 0), i.e. the unshaped template.
class PosedBody {
 public:
  PosedBody(const BodyModel& model, const AvatarParams& params, const CanonicalFrame& frame = {});
  ~PosedBody();
  PosedBody(PosedBody&&) noexcept;
  PosedBody& operator=(PosedBody&&) noexcept;

  const Mesh& mesh() const { return mesh_; }
  const MeshBvh& bvh() const { return bvh_; }
  const CanonicalFrame& frame() const { return frame_; }
  const AvatarParams& params() const { return params_; }

  // x^c, or nullopt outside the influence region. When nearest is given it
  // receives ξ(x).
  std::optional<Vec3> canonicalize(const Vec3& x, int* nearest = nullptr) const;
  // Direction mapped by the linear block of the nearest vertex's transform.
  Vec3 canonicalize_direction(int nearest, const Vec3& d) const;

 private:
  struct Index;
  const BodyModel* model_;
  AvatarParams params_;
  CanonicalFrame frame_;
  Mesh mesh_;
  MeshBvh bvh_;
  std::vector<Mat4> to_canonical_;  // C_i · M_i^{-1}
  Eigen::AlignedBox3d reach_;
  std::unique_ptr<Index> index_;
};

// Reference form: brute-force neighbours on an explicit posed mesh and
// transform sets. skin_weights is n_k × n_v.
std::optional<Vec3> canonicalize(const Vec3& x, const Mesh& posed_mesh, const VertexTransforms& transforms,
                                 const VertexTransforms& canon_transforms, const MatX& skin_weights,
                                 const CanonicalFrame& frame);

}  // namespace compav
