#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "compav/errors.hpp"
#include "compav/raster.hpp"
#include "compav/texture_paint.hpp"
#include "support/scenes.hpp"

using namespace compav;

namespace {

TextureMap random_texture(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  TextureMap t(h, w);
  for (double& v : t.texels) v = rng.uniform();
  return t;
}

Camera front_camera(int res) { return Camera::orbit(0, 0, 2.0, res, res, 40.0); }

}  // namespace

TEST_CASE("texel taps") {
  SUBCASE("bilinear weights are a partition of unity") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      const auto taps = texel_taps(7, 9, Vec2(rng.uniform(), rng.uniform()), TextureFilter::bilinear);
      double sum = 0;
      for (int k = 0; k < taps.count; ++k) sum += taps.weight[k];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  SUBCASE("texel centres sample exactly") {
    TextureMap t = random_texture(4, 5, 1);
    const Vec3 s = sample_texture(t, Vec2(2.5 / 5, 1.5 / 4), TextureFilter::bilinear);
    for (int ch = 0; ch < 3; ++ch) CHECK(s[ch] == doctest::Approx(t.at(1, 2, ch)).epsilon(1e-14));
  }
}

TEST_CASE("rasterize uniform gray texture") {
  const Mesh head = testing::toy_head();
  const FeatureImage img = rasterize(TextureMap(8, 8, Vec3::Constant(0.5)), front_camera(48), head);
  int covered = 0;
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    if (img.alpha[p] == 1.0) {
      ++covered;
      for (int ch = 0; ch < 3; ++ch) CHECK(img.data[p * 3 + ch] == doctest::Approx(0.5).epsilon(1e-12));
    } else {
      CHECK(img.alpha[p] == 0.0);
      for (int ch = 0; ch < 3; ++ch) CHECK(img.data[p * 3 + ch] == 0.0);
    }
  }
  CHECK(covered > 200);
  CHECK(img.alpha[img.index(24, 24)] == 1.0);
  CHECK(img.alpha[0] == 0.0);
}

TEST_CASE("rasterize requires UVs") {
  Mesh m = testing::square();
  m.uvs.resize(0, 2);
  CHECK_THROWS_AS(rasterize(TextureMap(2, 2), front_camera(8), m), ConfigError);
}

TEST_CASE("single red texel lands exactly inside its face's projection") {
  Mesh m = testing::square();
  // face 0 (lower-left triangle) maps inside texel (0,0); face 1 inside texel (1,1)
  m.uvs.resize(6, 2);
  m.uvs << 0.1, 0.1, 0.1, 0.4, 0.4, 0.4, 0.6, 0.6, 0.9, 0.9, 0.9, 0.6;
  m.uv_faces.resize(2, 3);
  m.uv_faces << 0, 1, 2, 3, 4, 5;
  TextureMap tex(2, 2, Vec3::Constant(0.3));
  tex.at(0, 0, 0) = 1.0;
  tex.at(0, 0, 1) = 0.0;
  tex.at(0, 0, 2) = 0.0;
  const int res = 64;
  const FeatureImage img = rasterize(tex, front_camera(res), m, TextureFilter::nearest);

  // Pinhole projection of face 0's corners for a camera at (0,0,2) looking down −z.
  const double f = (res / 2.0) / std::tan(20.0 * M_PI / 180.0);
  auto proj = [&](const Vec3& v) { return Vec2(res / 2.0 + f * v.x() / (2.0 - v.z()), res / 2.0 - f * v.y() / (2.0 - v.z())); };
  const Vec2 a = proj(m.vertices.row(0)), b = proj(m.vertices.row(3)), c = proj(m.vertices.row(2));
  auto edge = [](const Vec2& p, const Vec2& q, const Vec2& x) {
    const Vec2 d = q - p;
    return (d.x() * (x.y() - p.y()) - d.y() * (x.x() - p.x())) / d.norm();
  };
  const double orient = edge(a, b, c) > 0 ? 1.0 : -1.0;
  int inside = 0, checked = 0;
  for (int r = 0; r < res; ++r)
    for (int col = 0; col < res; ++col) {
      const Vec2 x(col + 0.5, r + 0.5);
      const double d = std::min({orient * edge(a, b, x), orient * edge(b, c, x), orient * edge(c, a, x)});
      if (std::abs(d) < 1e-6) continue;
      ++checked;
      const bool red = img.at(r, col, 0) == 1.0 && img.at(r, col, 1) == 0.0;
      CHECK(red == (d > 0));
      inside += d > 0;
    }
  CHECK(inside > 300);
  CHECK(checked > res * res - 2 * res);
}

TEST_CASE("rasterizer texel gradients match finite differences") {
  const Mesh head = testing::toy_head();
  TextureMap tex = random_texture(16, 16, 4);
  const Camera cam = Camera::orbit(30, 10, 2.2, 40, 40);
  const RasterFragments frags = rasterize_fragments(head, cam);
  // L = mean(I) + 0.5 mean(I²) over all pixel channels
  auto loss = [&](const TextureMap& t) {
    const FeatureImage img = shade(frags, t, TextureFilter::bilinear);
    double s = 0;
    for (double v : img.data) s += v + 0.5 * v * v;
    return s / static_cast<double>(img.data.size());
  };
  const FeatureImage img = shade(frags, tex, TextureFilter::bilinear);
  FeatureImage g(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) g.data[i] = (1.0 + img.data[i]) / static_cast<double>(img.data.size());
  std::vector<double> grad;
  shade_backward(frags, tex, TextureFilter::bilinear, g, grad);

  const auto cover = texel_coverage(frags, tex, TextureFilter::bilinear);
  Rng rng(9);
  int probes = 0;
  while (probes < 50) {
    const std::size_t texel = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(tex.texel_count()) - 1));
    if (cover[texel] == 0.0) continue;
    const std::size_t i = texel * 3 + static_cast<std::size_t>(rng.uniform_int(0, 2));
    const double h = 1e-5;
    TextureMap plus = tex, minus = tex;
    plus.texels[i] += h;
    minus.texels[i] -= h;
    const double fd = (loss(plus) - loss(minus)) / (2 * h);
    CHECK(std::abs(fd - grad[i]) <= 1e-3 * std::max(std::abs(fd), std::abs(grad[i])));
    ++probes;
  }
}

TEST_CASE("texture PNG round trip with sidecar") {
  TextureMap tex = random_texture(5, 7, 2);
  tex.valid[3] = tex.valid[12] = tex.valid[34] = 1;
  tex.quantize16();
  const auto dir = std::filesystem::temp_directory_path() / "compav_texture_rt";
  std::filesystem::create_directories(dir);
  save_texture(tex, dir / "tex.png", "abc123");
  std::string hash;
  const TextureMap back = load_texture(dir / "tex.png", &hash);
  CHECK(back == tex);
  CHECK(hash == "abc123");
  std::filesystem::remove_all(dir);
}

TEST_CASE("project_view") {
  PaintConfig cfg;
  SUBCASE("rendering of the previous texture is a fixed point") {
    const Mesh head = testing::toy_head();
    const TextureMap prev = random_texture(16, 16, 5);
    const Camera cam = front_camera(40);
    const auto res = project_view(prev, rasterize(prev, cam, head, cfg.filter), cam, head, cfg);
    CHECK(res.loss == 0.0);
    CHECK(res.texture.texels == prev.texels);
  }
  SUBCASE("flat target over a fully visible square converges") {
    const Mesh sq = testing::square();
    const Camera cam = front_camera(64);
    FeatureImage target(64, 64, 3);
    const Vec3 color(0.2, 0.7, 0.4);
    for (std::size_t p = 0; p < target.pixel_count(); ++p)
      for (int ch = 0; ch < 3; ++ch) target.data[p * 3 + ch] = color[ch];
    const auto res = project_view(TextureMap(8, 8), target, cam, sq, cfg);
    MESSAGE("steps " << res.steps << " loss " << res.loss);
    for (std::size_t i = 0; i < res.texture.texel_count(); ++i) {
      REQUIRE(res.texture.valid[i] == 1);
      for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(res.texture.texels[i * 3 + ch] - color[ch]) < 1e-2);
    }
  }
  SUBCASE("texels hidden from the view keep their values bit-exactly") {
    const Mesh head = testing::toy_head();
    const TextureMap prev = random_texture(16, 16, 6);
    const Camera cam = front_camera(40);
    FeatureImage target(40, 40, 3, 0.9);
    const auto res = project_view(prev, target, cam, head, cfg);
    const auto cover = texel_coverage(rasterize_fragments(head, cam), prev, cfg.filter);
    int hidden = 0, moved = 0;
    for (std::size_t i = 0; i < cover.size(); ++i)
      for (int ch = 0; ch < 3; ++ch) {
        if (cover[i] == 0.0) {
          ++hidden;
          CHECK(res.texture.texels[i * 3 + ch] == prev.texels[i * 3 + ch]);
          CHECK(res.texture.valid[i] == 0);
        } else {
          moved += res.texture.texels[i * 3 + ch] != prev.texels[i * 3 + ch];
        }
      }
    CHECK(hidden > 0);
    CHECK(moved > 0);
  }
  SUBCASE("non-finite target is rejected") {
    const Mesh sq = testing::square();
    FeatureImage target(16, 16, 3, 0.5);
    target.data[7] = std::nan("");
    CHECK_THROWS_AS(project_view(TextureMap(4, 4), target, front_camera(16), sq, cfg), InputError);
  }
}

TEST_CASE("symmetry_loss") {
  FeatureImage a(6, 5, 3, 0.25), b(6, 5, 3, 0.75);
  CHECK(symmetry_loss(a, a) == 0.0);
  CHECK(symmetry_loss(a, b) == doctest::Approx(0.25).epsilon(1e-15));

  SUBCASE("mirror views of a symmetric textured head") {
    const Mesh head = testing::toy_head();
    TextureMap tex(32, 32);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        const double u = std::abs((c + 0.5) / 32 - 0.5), v = (r + 0.5) / 32;
        tex.at(r, c, 0) = 0.5 + 0.4 * std::sin(6 * u + 3 * v);
        tex.at(r, c, 1) = 0.5 + 0.4 * std::cos(9 * u * v);
        tex.at(r, c, 2) = v;
      }
    for (double az : {45.0, 90.0, 135.0}) {
      const FeatureImage left = rasterize(tex, Camera::orbit(az, 0, 2.2, 48, 48), head);
      const FeatureImage right = rasterize(tex, Camera::orbit(-az, 0, 2.2, 48, 48), head);
      const double l = symmetry_loss(right, left.flipped_horizontal());
      MESSAGE("azimuth " << az << " symmetry loss " << l);
      CHECK(l < 1e-3);
    }
  }
}
