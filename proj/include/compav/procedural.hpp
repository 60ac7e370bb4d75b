#pragma once

#include <memory>

#include "compav/avatar.hpp"
#include "compav/synthetic_oracle.hpp"

namespace compav {

// Ellipsoid cap above the scalp in canonical space, standing in for a
// generated style component.
struct ShellSpec {
  Vec3 center{0.0, 0.3, 0.0};
  Vec3 radii{0.46, 0.38, 0.46};
  double y_min = 0.25;
  double density = 40.0;
  Vec3 color{0.22, 0.13, 0.07};
  std::string keyword = "hair";

  bool contains(const Vec3& x) const;
};

class ShellField : public RadianceField {
 public:
  ShellField(ShellSpec spec, VecX color) : spec_(std::move(spec)), color_(std::move(color)) {}
  int channels() const override { return static_cast<int>(color_.size()); }
  void evaluate(const Points& x, const Points& d, VecX& sigma, MatX& color) const override;

 private:
  ShellSpec spec_;
  VecX color_;
};

// Skin-toned texture with darker brows and lips; mirror-symmetric in u.
TextureMap procedural_texture(int height = 128, int width = 128);

// Shell render for a camera: feature image in the requested space over the
// rig's textured mesh, alpha = Ω̂ of the shell.
FeatureImage render_shell(const AvatarRig& rig, const ShellSpec& shell, const Camera& camera, RenderSpace space,
                          const LinearCodec& codec, const RenderOptions& rays);
// Binary silhouette of the shell (Ω̂ > 0.5) with mesh occlusion.
ScalarImage shell_silhouette(const AvatarRig& rig, const ShellSpec& shell, const Camera& camera,
                             const RenderOptions& rays);

struct ProceduralSetup {
  ShellSpec shell;
  RenderOptions target_rays{96, -1.0, 1.0, false, 0};
  // Generation renders this texture on the rig mesh; landmarks come from
  // the model at `landmark_beta`.
  TextureMap paint_source = procedural_texture();
  VecX landmark_beta;
  std::uint64_t seed = 0;
};

// Synthetic oracle wired to a rig: ideal-target critic whose target is the
// rig with the shell attached, an analytic silhouette segmenter for the
// shell keyword (empty for any other keyword), a generator rendering
// `paint_source` and a landmark detector reporting the rig model's landmarks
// at `landmark_beta`.
std::unique_ptr<SyntheticOracle> make_procedural_oracle(const AvatarRig& rig, const ProceduralSetup& setup);

double mask_iou(const ScalarImage& a, const std::vector<double>& b, double threshold = 0.5);

}  // namespace compav
