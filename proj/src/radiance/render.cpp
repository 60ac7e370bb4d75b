#include "compav/render.hpp"

#include <cmath>

#include "compav/errors.hpp"

namespace compav {

FeatureImage render_image(const RadianceField& field, const Camera& camera, const PosedBody* body,
                          const SurfaceLayer& surface, const RenderOptions& options, RenderTape* tape) {
  if (options.samples < 2) throw ConfigError("render: need at least 2 samples per ray");
  const int C = field.channels();
  const bool hybrid = surface.fragments != nullptr;
  const bool background = surface.features != nullptr;
  if (hybrid && (surface.fragments->height != camera.height || surface.fragments->width != camera.width))
    throw ConfigError("render: surface hits do not match the camera resolution");
  if (background) {
    if (surface.features->height != camera.height || surface.features->width != camera.width)
      throw ConfigError("render: surface features do not match the camera resolution");
    if (surface.features->channels != C)
      throw ConfigError("render: surface has " + std::to_string(surface.features->channels) + " channels, field has " +
                        std::to_string(C));
  }
  const MlpField* mlp = nullptr;
  if (tape) {
    mlp = dynamic_cast<const MlpField*>(&field);
    if (!mlp) throw ParameterError("render: gradients need an MlpField");
  }

  const std::size_t npix = static_cast<std::size_t>(camera.height) * camera.width;
  std::vector<RenderTape::Pixel> pixels(npix);
  std::vector<RenderTape::Sample> samples;
  samples.reserve(npix * static_cast<std::size_t>(options.samples));
  std::vector<Vec3> xs, ds;
  xs.reserve(samples.capacity());
  ds.reserve(samples.capacity());

  for (int r = 0; r < camera.height; ++r) {
    for (int c = 0; c < camera.width; ++c) {
      const std::size_t p = static_cast<std::size_t>(r) * camera.width + c;
      const Ray ray = camera.pixel_ray(r, c);
      const double s0 = ray_center_offset(ray, camera.target);
      if (s0 + options.near <= 0.0) throw ConfigError("render: camera is inside or behind the scene bounds");
      RenderTape::Pixel& px = pixels[p];
      px.first = static_cast<int>(samples.size());
      double far = options.far;
      int bins = options.samples;
      if (hybrid && surface.fragments->covered(p)) {
        px.hit = true;
        const double hit = surface.fragments->pixels[p].depth - s0;
        if (hit <= options.near) continue;  // degenerate: surface only
        far = std::min(far, hit);
        bins = options.samples - 1;
      }
      Rng rng(Rng::derive_seed(options.seed, static_cast<std::uint64_t>(p)));
      const RaySamples rs = stratified_samples(ray, camera.target, options.near, far, bins, options.jitter ? &rng : nullptr);
      for (int i = 0; i < rs.count(); ++i) {
        RenderTape::Sample s;
        s.delta = rs.deltas[static_cast<std::size_t>(i)];
        Vec3 x = rs.position(i), d = ray.direction;
        bool inside = true;
        if (body) {
          int nearest = -1;
          const auto xc = body->canonicalize(x, &nearest);
          if (xc) {
            x = *xc;
            d = body->canonicalize_direction(nearest, d);
          } else {
            inside = false;
          }
        }
        if (inside) {
          s.row = static_cast<int>(xs.size());
          xs.push_back(x);
          ds.push_back(d);
        }
        samples.push_back(s);
      }
      px.count = static_cast<int>(samples.size()) - px.first;
    }
  }

  Points xm(static_cast<Eigen::Index>(xs.size()), 3), dm(static_cast<Eigen::Index>(ds.size()), 3);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xm.row(static_cast<Eigen::Index>(i)) = xs[i].transpose();
    dm.row(static_cast<Eigen::Index>(i)) = ds[i].transpose();
  }
  VecX sigma;
  MatX color;
  if (xs.empty()) {
    sigma.resize(0);
    color.resize(0, C);
  } else if (mlp) {
    mlp->forward(xm, dm, sigma, color, &tape->field);
  } else {
    field.evaluate(xm, dm, sigma, color);
  }

  FeatureImage out(camera.height, camera.width, C);
  for (std::size_t p = 0; p < npix; ++p) {
    const RenderTape::Pixel& px = pixels[p];
    double t = 1.0, mask = 0.0;
    auto f = out.pixel(p);
    for (int k = 0; k < px.count; ++k) {
      const RenderTape::Sample& s = samples[static_cast<std::size_t>(px.first + k)];
      if (s.row < 0) continue;
      const double decay = std::exp(-std::max(sigma[s.row], 0.0) * s.delta);
      const double a = t * (1.0 - decay);
      for (int ch = 0; ch < C; ++ch) f[static_cast<std::size_t>(ch)] += a * color(s.row, ch);
      mask += a;
      t *= decay;
    }
    if (background) {
      const auto cs = surface.features->pixel(p);
      for (int ch = 0; ch < C; ++ch) f[static_cast<std::size_t>(ch)] += t * cs[static_cast<std::size_t>(ch)];
    }
    out.alpha[p] = mask;
  }

  if (tape) {
    tape->channels = C;
    tape->pixels = std::move(pixels);
    tape->samples = std::move(samples);
    tape->sigma = std::move(sigma);
    tape->color = std::move(color);
    tape->surface = background ? *surface.features : FeatureImage();
  }
  return out;
}

void render_backward(const MlpField& field, const RenderTape& tape, const FeatureImage& grad_image, VecX& grad_params) {
  const int C = tape.channels;
  if (grad_image.channels != C || grad_image.pixel_count() != tape.pixels.size())
    throw ParameterError("render_backward: gradient image shape mismatch");
  const Eigen::Index n = tape.sigma.size();
  VecX dsigma = VecX::Zero(n);
  MatX dcolor = MatX::Zero(n, C);
  std::vector<double> alpha, after;  // α_i and T_{i+1} per sample of a pixel

  for (std::size_t p = 0; p < tape.pixels.size(); ++p) {
    const RenderTape::Pixel& px = tape.pixels[p];
    if (px.count == 0) continue;
    const auto g = grad_image.pixel(p);
    const double gm = grad_image.alpha[p];
    alpha.assign(static_cast<std::size_t>(px.count), 0.0);
    after.assign(static_cast<std::size_t>(px.count), 0.0);
    double t = 1.0;
    for (int k = 0; k < px.count; ++k) {
      const RenderTape::Sample& s = tape.samples[static_cast<std::size_t>(px.first + k)];
      if (s.row >= 0) {
        const double decay = std::exp(-std::max(tape.sigma[s.row], 0.0) * s.delta);
        alpha[static_cast<std::size_t>(k)] = t * (1.0 - decay);
        t *= decay;
      }
      after[static_cast<std::size_t>(k)] = t;
    }
    const double t_end = t;
    // g · c* weighted by the final transmittance
    double g_surface = 0.0;
    if (!tape.surface.data.empty()) {
      const auto cs = tape.surface.pixel(p);
      for (int ch = 0; ch < C; ++ch) g_surface += g[static_cast<std::size_t>(ch)] * cs[static_cast<std::size_t>(ch)];
    }
    double g_suffix = 0.0;  // g · Σ_{i>k} α_i c_i
    for (int k = px.count - 1; k >= 0; --k) {
      const RenderTape::Sample& s = tape.samples[static_cast<std::size_t>(px.first + k)];
      if (s.row < 0) continue;
      double g_ck = 0.0;
      for (int ch = 0; ch < C; ++ch) {
        const double gc = g[static_cast<std::size_t>(ch)];
        dcolor(s.row, ch) += alpha[static_cast<std::size_t>(k)] * gc;
        g_ck += gc * tape.color(s.row, ch);
      }
      if (tape.sigma[s.row] >= 0.0) {
        dsigma[s.row] += s.delta * (after[static_cast<std::size_t>(k)] * g_ck - g_suffix - t_end * g_surface + gm * t_end);
      }
      g_suffix += alpha[static_cast<std::size_t>(k)] * g_ck;
    }
  }
  field.backward(tape.field, dsigma, dcolor, grad_params);
}

}  // namespace compav
