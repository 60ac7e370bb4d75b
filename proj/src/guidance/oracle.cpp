#include "compav/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "compav/errors.hpp"

namespace compav {

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t >= static_cast<int>(alphas_cumprod.size()))
    throw OracleError("timestep " + std::to_string(t) + " outside the noise schedule", false);
  return alphas_cumprod[static_cast<std::size_t>(t)];
}

NoiseSchedule NoiseSchedule::scaled_linear(int steps) {
  NoiseSchedule s;
  s.alphas_cumprod.resize(static_cast<std::size_t>(steps));
  const double a = std::sqrt(8.5e-4), b = std::sqrt(1.2e-2);
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double r = steps > 1 ? a + (b - a) * t / (steps - 1) : a;
    prod *= 1.0 - r * r;
    s.alphas_cumprod[static_cast<std::size_t>(t)] = prod;
  }
  s.t_min = std::min(20, steps - 1);
  s.t_max = std::max(s.t_min, steps * 98 / 100);
  return s;
}

bool OracleHealth::supports(const std::string& capability) const {
  return std::find(capabilities.begin(), capabilities.end(), capability) != capabilities.end();
}

void Oracle::unsupported(const std::string& capability) const {
  throw UnsupportedCapability(capability);
}

FeatureImage Oracle::generate(const GenerateRequest&) { unsupported("generate"); }
DenoiseResponse Oracle::denoise(const DenoiseRequest&) { unsupported("denoise"); }
ScalarImage Oracle::segment(const SegmentRequest&) { unsupported("segment"); }
Eigen::VectorXd Oracle::embed_image(const FeatureImage&) { unsupported("embed_image"); }
FeatureImage Oracle::embed_image_vjp(const FeatureImage&, const Eigen::VectorXd&) { unsupported("embed_image"); }
Eigen::VectorXd Oracle::embed_text(const std::string&) { unsupported("embed_text"); }
FeatureImage Oracle::encode(const FeatureImage&) { unsupported("encode"); }
FeatureImage Oracle::decode(const FeatureImage&) { unsupported("decode"); }
LandmarkSet Oracle::landmarks(const FeatureImage&) { unsupported("landmarks"); }

}  // namespace compav
