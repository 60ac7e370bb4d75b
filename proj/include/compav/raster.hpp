#pragma once

#include <vector>

#include "compav/bvh.hpp"
#include "compav/image.hpp"
#include "compav/texture.hpp"

namespace compav {

struct Fragment {
  int face = -1;  // -1 for background
  double depth = 0.0;
  Vec3 barycentric;
  Vec2 uv;
};

// Per-pixel first-hit records for one camera; reused by shading and its
// backward pass.
struct RasterFragments {
  int height = 0;
  int width = 0;
  std::vector<Fragment> pixels;

  bool covered(std::size_t p) const { return pixels[p].face >= 0; }
};

// Ray casts one ray per pixel centre. Throws ConfigError if the mesh has no UVs.
RasterFragments rasterize_fragments(const Mesh& mesh, const MeshBvh& bvh, const Camera& camera);
RasterFragments rasterize_fragments(const Mesh& mesh, const Camera& camera);

// RGB image with alpha = coverage; background pixels are zero.
FeatureImage shade(const RasterFragments& fragments, const TextureMap& texture, TextureFilter filter);

// Accumulates dL/dtexel given dL/dpixel (grad_image has 3 channels).
void shade_backward(const RasterFragments& fragments, const TextureMap& texture, TextureFilter filter,
                    const FeatureImage& grad_image, std::vector<double>& grad_texels);

// Summed tap weight per texel; a texel is visible in a view when this is > 0.
std::vector<double> texel_coverage(const RasterFragments& fragments, const TextureMap& texture, TextureFilter filter);

FeatureImage rasterize(const TextureMap& texture, const Camera& camera, const Mesh& mesh,
                       TextureFilter filter = TextureFilter::bilinear);

// Inverse depth scaled so the nearest covered pixel is 1; background 0.
ScalarImage inverse_depth_image(const RasterFragments& fragments);

}  // namespace compav
