#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "compav/image.hpp"
#include "compav/types.hpp"

namespace compav {

enum class TextureFilter { nearest, bilinear };

// H×W RGB texel grid in [0,1] with a painted-so-far mask. Texel (row, col)
// has its centre at uv = ((col + 0.5) / W, (row + 0.5) / H); v grows
// downward with the row index.
struct TextureMap {
  int height = 0;
  int width = 0;
  std::vector<double> texels;        // row-major, 3 channels interleaved
  std::vector<std::uint8_t> valid;  // one flag per texel

  TextureMap() = default;
  TextureMap(int h, int w, const Vec3& fill = Vec3::Constant(0.5));

  std::size_t texel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
  double& at(int row, int col, int ch) { return texels[index(row, col) * 3 + ch]; }
  double at(int row, int col, int ch) const { return texels[index(row, col) * 3 + ch]; }

  // Snap every texel to the nearest 16-bit level (what the PNG file stores).
  void quantize16();
  bool operator==(const TextureMap&) const = default;
};

struct TexelTaps {
  std::array<int, 4> texel{};  // texel index (row * W + col)
  std::array<double, 4> weight{};
  int count = 0;
};

TexelTaps texel_taps(int height, int width, const Vec2& uv, TextureFilter filter);
Vec3 sample_texture(const TextureMap& texture, const Vec2& uv, TextureFilter filter);

// 16-bit RGB PNG plus a JSON sidecar (<path>.json) holding the validity mask
// and caller metadata such as the view schedule hash.
void save_texture(const TextureMap& texture, const std::filesystem::path& png_path, const std::string& schedule_hash = "");
// 8-bit RGBA PNG of a color image; alpha comes from the coverage channel.
void save_image_png(const FeatureImage& image, const std::filesystem::path& png_path);
TextureMap load_texture(const std::filesystem::path& png_path, std::string* schedule_hash = nullptr);

}  // namespace compav
