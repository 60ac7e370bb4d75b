#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "compav/camera.hpp"
#include "compav/rng.hpp"
#include "compav/types.hpp"

namespace compav {

// Depth samples along a ray. Depth ℓ is measured from the point on the ray
// closest to the scene centre, so x(ℓ) = o + (s0 + ℓ)·d with s0 = (c − o)·d.
struct RaySamples {
  Ray ray;
  double s0 = 0.0;
  double near = -1.0;
  double far = 1.0;
  std::vector<double> depths;  // one per uniform bin, increasing
  std::vector<double> deltas;  // Δℓ_i = ℓ_{i+1} − ℓ_i, last = far − ℓ_n

  int count() const { return static_cast<int>(depths.size()); }
  Vec3 position(int i) const { return ray.origin + (s0 + depths[static_cast<std::size_t>(i)]) * ray.direction; }
};

double ray_center_offset(const Ray& ray, const Vec3& center);

// One sample per uniform bin of [near, far]. Without an RNG each sample sits
// at its bin start, giving Δℓ equal to the bin width everywhere.
RaySamples stratified_samples(const Ray& ray, const Vec3& center, double near, double far, int bins, Rng* rng);

// Abstract density/feature field evaluated at (canonical) points.
class RadianceField {
 public:
  virtual ~RadianceField() = default;
  virtual int channels() const = 0;
  // positions and directions are N×3; writes sigma (N) and color (N×C).
  virtual void evaluate(const Points& positions, const Points& directions, VecX& sigma, MatX& color) const = 0;
};

// Alpha compositing of per-sample densities and features.
struct Composite {
  VecX feature;                // Σ α_i c_i (+ T_end c* for surface hits)
  double mask = 0.0;           // Σ α_i
  double transmittance = 1.0;  // T_end = exp(−Σ σ_j Δℓ_j)
  std::vector<double> alpha;
};

Composite composite(const VecX& sigma, const MatX& color, const std::vector<double>& deltas,
                    const VecX* surface = nullptr);

// Pure volume rendering of a ray.
VecX render_ray(const RadianceField& field, const RaySamples& samples);
// Mesh-integrated rendering: samples cover [ℓ_n, ℓ_hit) and the remaining
// transmittance goes to the surface feature. A hit at or before ℓ_n returns
// the surface feature unchanged.
VecX render_ray_hybrid(const RadianceField& field, const RaySamples& samples, double hit_depth, const VecX& surface);
double render_mask(const RadianceField& field, const RaySamples& samples);

}  // namespace compav
