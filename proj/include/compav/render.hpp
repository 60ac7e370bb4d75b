#pragma once

#include <cstdint>
#include <vector>

#include "compav/canonical.hpp"
#include "compav/image.hpp"
#include "compav/mlp_field.hpp"
#include "compav/raster.hpp"

namespace compav {

struct RenderOptions {
  int samples = 96;  // n_ℓ
  double near = -1.0;
  double far = 1.0;
  bool jitter = true;
  std::uint64_t seed = 0;
};

// What lies behind the field. Rays covered by `fragments` stop at the mesh
// hit; every pixel's remaining transmittance goes to `features` (c* on the
// surface, zero or earlier components elsewhere). Both are optional.
struct SurfaceLayer {
  const RasterFragments* fragments = nullptr;
  const FeatureImage* features = nullptr;
};

// Everything the backward pass needs from one render.
struct RenderTape {
  struct Pixel {
    int first = 0;   // into samples
    int count = 0;
    bool hit = false;  // ray truncated at the mesh
  };
  struct Sample {
    double delta = 0.0;
    int row = -1;    // batch row, -1 for empty space
  };
  int channels = 0;
  std::vector<Pixel> pixels;
  std::vector<Sample> samples;
  VecX sigma;
  MatX color;
  FeatureImage surface;
  MlpField::Tape field;
};

// Per-pixel hybrid rendering (pure volume rendering where the ray misses the
// mesh and no background is given). Sample points are canonicalized through
// `body` when it is non-null. The returned alpha channel holds the mask Ω̂.
// Passing a tape requires an MlpField.
FeatureImage render_image(const RadianceField& field, const Camera& camera, const PosedBody* body,
                          const SurfaceLayer& surface, const RenderOptions& options, RenderTape* tape = nullptr);

// Accumulates ∂L/∂Φ given ∂L/∂image (grad_image.data) and ∂L/∂Ω̂ (grad_image.alpha).
void render_backward(const MlpField& field, const RenderTape& tape, const FeatureImage& grad_image, VecX& grad_params);

}  // namespace compav
