#include "compav/texture.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <memory>

#include "compav/encoding.hpp"
#include "compav/errors.hpp"

namespace compav {

using json = nlohmann::json;

TextureMap::TextureMap(int h, int w, const Vec3& fill)
    : height(h), width(w), texels(static_cast<std::size_t>(h) * w * 3), valid(static_cast<std::size_t>(h) * w, 0) {
  if (h <= 0 || w <= 0) throw ParameterError("texture size must be positive");
  for (std::size_t i = 0; i < texel_count(); ++i)
    for (int ch = 0; ch < 3; ++ch) texels[i * 3 + ch] = fill[ch];
}

void TextureMap::quantize16() {
  for (double& v : texels) v = std::lround(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0;
}

TexelTaps texel_taps(int height, int width, const Vec2& uv, TextureFilter filter) {
  TexelTaps taps;
  const double x = uv.x() * width - 0.5;
  const double y = uv.y() * height - 0.5;
  if (filter == TextureFilter::nearest) {
    const int c = std::clamp(static_cast<int>(std::floor(x + 0.5)), 0, width - 1);
    const int r = std::clamp(static_cast<int>(std::floor(y + 0.5)), 0, height - 1);
    taps.texel[0] = r * width + c;
    taps.weight[0] = 1.0;
    taps.count = 1;
    return taps;
  }
  const double fx = std::floor(x), fy = std::floor(y);
  const double tx = x - fx, ty = y - fy;
  const int c0 = static_cast<int>(fx), r0 = static_cast<int>(fy);
  const int cs[2] = {std::clamp(c0, 0, width - 1), std::clamp(c0 + 1, 0, width - 1)};
  const int rs[2] = {std::clamp(r0, 0, height - 1), std::clamp(r0 + 1, 0, height - 1)};
  const double wx[2] = {1.0 - tx, tx}, wy[2] = {1.0 - ty, ty};
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      taps.texel[taps.count] = rs[j] * width + cs[i];
      taps.weight[taps.count] = wy[j] * wx[i];
      ++taps.count;
    }
  }
  return taps;
}

Vec3 sample_texture(const TextureMap& texture, const Vec2& uv, TextureFilter filter) {
  const TexelTaps taps = texel_taps(texture.height, texture.width, uv, filter);
  Vec3 out = Vec3::Zero();
  for (int k = 0; k < taps.count; ++k) {
    const double* t = &texture.texels[static_cast<std::size_t>(taps.texel[k]) * 3];
    out += taps.weight[k] * Vec3(t[0], t[1], t[2]);
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

std::vector<std::uint8_t> pack_mask(const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> bits((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return bits;
}

}  // namespace

void save_texture(const TextureMap& texture, const std::filesystem::path& png_path, const std::string& schedule_hash) {
  const auto tmp = png_path.string() + ".tmp";
  {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(tmp.c_str(), "wb"));
    if (!file) throw LoadError("cannot write " + tmp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw LoadError("libpng failed writing " + tmp);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(texture.width), static_cast<png_uint_32>(texture.height), 16,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(texture.width) * 6);
    for (int r = 0; r < texture.height; ++r) {
      for (int c = 0; c < texture.width; ++c) {
        for (int ch = 0; ch < 3; ++ch) {
          const auto q = static_cast<unsigned>(std::lround(std::clamp(texture.at(r, c, ch), 0.0, 1.0) * 65535.0));
          row[(c * 3 + ch) * 2] = static_cast<png_byte>(q >> 8);  // PNG is big-endian
          row[(c * 3 + ch) * 2 + 1] = static_cast<png_byte>(q & 0xff);
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, png_path);

  json side = {{"schema_version", 1},
               {"width", texture.width},
               {"height", texture.height},
               {"valid", base64_encode(pack_mask(texture.valid))},
               {"schedule_hash", schedule_hash}};
  write_file_atomic(png_path.string() + ".json", side.dump(2));
}

void save_image_png(const FeatureImage& image, const std::filesystem::path& png_path) {
  if (image.channels != 3) throw ParameterError("save_image_png: expected 3 channels");
  const auto tmp = png_path.string() + ".tmp";
  {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(tmp.c_str(), "wb"));
    if (!file) throw LoadError("cannot write " + tmp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw LoadError("libpng failed writing " + tmp);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    auto byte = [](double v) { return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 4);
    for (int r = 0; r < image.height; ++r) {
      for (int c = 0; c < image.width; ++c) {
        for (int ch = 0; ch < 3; ++ch) row[c * 4 + ch] = byte(image.at(r, c, ch));
        row[c * 4 + 3] = byte(image.alpha[image.index(r, c)]);
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, png_path);
}

TextureMap load_texture(const std::filesystem::path& png_path, std::string* schedule_hash) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(png_path.c_str(), "rb"));
  if (!file) throw LoadError("cannot open texture " + png_path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("malformed PNG " + png_path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError(png_path.string() + ": expected 16-bit RGB texture");
  }
  TextureMap tex(h, w);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 6);
  for (int r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const unsigned q = (static_cast<unsigned>(row[(c * 3 + ch) * 2]) << 8) | row[(c * 3 + ch) * 2 + 1];
        tex.at(r, c, ch) = q / 65535.0;
      }
  }
  png_destroy_read_struct(&png, &info, nullptr);

  const auto side_path = png_path.string() + ".json";
  if (std::filesystem::exists(side_path)) {
    const auto bytes = read_file(side_path);
    json side;
    try {
      side = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      throw LoadError(side_path + ": " + e.what());
    }
    if (side.value("schema_version", 0) != 1) throw LoadError(side_path + ": unsupported schema_version");
    if (side.at("width") != w || side.at("height") != h) throw LoadError(side_path + ": size does not match PNG");
    const auto bits = base64_decode(side.at("valid").get<std::string>());
    if (bits.size() != (tex.texel_count() + 7) / 8) throw LoadError(side_path + ": validity mask has wrong length");
    for (std::size_t i = 0; i < tex.texel_count(); ++i) tex.valid[i] = (bits[i / 8] >> (i % 8)) & 1u;
    if (schedule_hash) *schedule_hash = side.value("schedule_hash", "");
  }
  return tex;
}

}  // namespace compav
