#include "compav/raster.hpp"

#include <algorithm>

#include "compav/errors.hpp"

namespace compav {

RasterFragments rasterize_fragments(const Mesh& mesh, const MeshBvh& bvh, const Camera& camera) {
  if (!mesh.has_uvs()) throw ConfigError("rasterize: mesh has no UV coordinates");
  RasterFragments out;
  out.height = camera.height;
  out.width = camera.width;
  out.pixels.resize(static_cast<std::size_t>(camera.height) * camera.width);
  for (int r = 0; r < camera.height; ++r) {
    for (int c = 0; c < camera.width; ++c) {
      const auto hit = bvh.intersect(camera.pixel_ray(r, c));
      if (!hit) continue;
      Fragment& f = out.pixels[static_cast<std::size_t>(r) * camera.width + c];
      f.face = hit->face;
      f.depth = hit->t;
      f.barycentric = hit->barycentric;
      f.uv.setZero();
      for (int k = 0; k < 3; ++k) f.uv += hit->barycentric[k] * mesh.uvs.row(mesh.uv_faces(hit->face, k)).transpose();
    }
  }
  return out;
}

RasterFragments rasterize_fragments(const Mesh& mesh, const Camera& camera) {
  if (!mesh.has_uvs()) throw ConfigError("rasterize: mesh has no UV coordinates");
  return rasterize_fragments(mesh, MeshBvh(mesh), camera);
}

FeatureImage shade(const RasterFragments& fragments, const TextureMap& texture, TextureFilter filter) {
  FeatureImage img(fragments.height, fragments.width, 3);
  for (std::size_t p = 0; p < fragments.pixels.size(); ++p) {
    if (!fragments.covered(p)) continue;
    const Vec3 color = sample_texture(texture, fragments.pixels[p].uv, filter);
    for (int ch = 0; ch < 3; ++ch) img.data[p * 3 + ch] = color[ch];
    img.alpha[p] = 1.0;
  }
  return img;
}

void shade_backward(const RasterFragments& fragments, const TextureMap& texture, TextureFilter filter,
                    const FeatureImage& grad_image, std::vector<double>& grad_texels) {
  if (grad_image.height != fragments.height || grad_image.width != fragments.width || grad_image.channels != 3)
    throw ParameterError("shade_backward: gradient image shape mismatch");
  grad_texels.resize(texture.texels.size(), 0.0);
  for (std::size_t p = 0; p < fragments.pixels.size(); ++p) {
    if (!fragments.covered(p)) continue;
    const TexelTaps taps = texel_taps(texture.height, texture.width, fragments.pixels[p].uv, filter);
    for (int k = 0; k < taps.count; ++k)
      for (int ch = 0; ch < 3; ++ch)
        grad_texels[static_cast<std::size_t>(taps.texel[k]) * 3 + ch] += taps.weight[k] * grad_image.data[p * 3 + ch];
  }
}

std::vector<double> texel_coverage(const RasterFragments& fragments, const TextureMap& texture, TextureFilter filter) {
  std::vector<double> cover(texture.texel_count(), 0.0);
  for (std::size_t p = 0; p < fragments.pixels.size(); ++p) {
    if (!fragments.covered(p)) continue;
    const TexelTaps taps = texel_taps(texture.height, texture.width, fragments.pixels[p].uv, filter);
    for (int k = 0; k < taps.count; ++k) cover[static_cast<std::size_t>(taps.texel[k])] += taps.weight[k];
  }
  return cover;
}

FeatureImage rasterize(const TextureMap& texture, const Camera& camera, const Mesh& mesh, TextureFilter filter) {
  return shade(rasterize_fragments(mesh, camera), texture, filter);
}

ScalarImage inverse_depth_image(const RasterFragments& fragments) {
  ScalarImage out(fragments.height, fragments.width, 0.0);
  double hi = 0.0;
  for (std::size_t p = 0; p < fragments.pixels.size(); ++p)
    if (fragments.covered(p)) hi = std::max(hi, 1.0 / fragments.pixels[p].depth);
  for (std::size_t p = 0; p < fragments.pixels.size(); ++p)
    if (fragments.covered(p)) out.values[p] = (1.0 / fragments.pixels[p].depth) / hi;
  return out;
}

}  // namespace compav
