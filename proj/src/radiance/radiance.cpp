#include "compav/radiance.hpp"

#include <cmath>

#include "compav/errors.hpp"

namespace compav {

double ray_center_offset(const Ray& ray, const Vec3& center) { return (center - ray.origin).dot(ray.direction); }

RaySamples stratified_samples(const Ray& ray, const Vec3& center, double near, double far, int bins, Rng* rng) {
  if (bins <= 0) throw ParameterError("stratified_samples: bin count must be positive");
  if (!(far > near)) throw ParameterError("stratified_samples: far must exceed near");
  RaySamples s;
  s.ray = ray;
  s.s0 = ray_center_offset(ray, center);
  s.near = near;
  s.far = far;
  s.depths.resize(static_cast<std::size_t>(bins));
  s.deltas.resize(static_cast<std::size_t>(bins));
  const double h = (far - near) / bins;
  for (int i = 0; i < bins; ++i) {
    const double u = rng ? rng->uniform() : 0.0;
    s.depths[static_cast<std::size_t>(i)] = near + (i + u) * h;
  }
  for (int i = 0; i + 1 < bins; ++i)
    s.deltas[static_cast<std::size_t>(i)] = s.depths[static_cast<std::size_t>(i + 1)] - s.depths[static_cast<std::size_t>(i)];
  s.deltas.back() = far - s.depths.back();
  return s;
}

Composite composite(const VecX& sigma, const MatX& color, const std::vector<double>& deltas, const VecX* surface) {
  const int n = static_cast<int>(sigma.size());
  Composite out;
  out.feature = VecX::Zero(color.cols());
  out.alpha.resize(static_cast<std::size_t>(n));
  double t = 1.0;
  for (int i = 0; i < n; ++i) {
    const double s = std::max(sigma[i], 0.0);
    const double decay = std::exp(-s * deltas[static_cast<std::size_t>(i)]);
    const double a = t * (1.0 - decay);
    out.alpha[static_cast<std::size_t>(i)] = a;
    out.feature += a * color.row(i).transpose();
    out.mask += a;
    t *= decay;
  }
  out.transmittance = t;
  if (surface) out.feature += t * *surface;
  return out;
}

namespace {

void evaluate_samples(const RadianceField& field, const RaySamples& samples, VecX& sigma, MatX& color) {
  const int n = samples.count();
  Points x(n, 3), d(n, 3);
  for (int i = 0; i < n; ++i) {
    x.row(i) = samples.position(i).transpose();
    d.row(i) = samples.ray.direction.transpose();
  }
  field.evaluate(x, d, sigma, color);
}

}  // namespace

VecX render_ray(const RadianceField& field, const RaySamples& samples) {
  VecX sigma;
  MatX color;
  evaluate_samples(field, samples, sigma, color);
  return composite(sigma, color, samples.deltas).feature;
}

VecX render_ray_hybrid(const RadianceField& field, const RaySamples& samples, double hit_depth, const VecX& surface) {
  if (hit_depth <= samples.near || samples.count() == 0) return surface;
  VecX sigma;
  MatX color;
  evaluate_samples(field, samples, sigma, color);
  return composite(sigma, color, samples.deltas, &surface).feature;
}

double render_mask(const RadianceField& field, const RaySamples& samples) {
  VecX sigma;
  MatX color;
  evaluate_samples(field, samples, sigma, color);
  return composite(sigma, color, samples.deltas).mask;
}

}  // namespace compav
