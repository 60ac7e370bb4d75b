#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "compav/camera.hpp"
#include "compav/image.hpp"
#include "compav/landmark_fit.hpp"

namespace compav {

inline constexpr int kProtocolVersion = 1;

// Discrete diffusion noise schedule advertised by the oracle.
struct NoiseSchedule {
  std::vector<double> alphas_cumprod;  // ᾱ_t for t = 0..T-1
  int t_min = 20;
  int t_max = 980;

  double alpha_bar(int t) const;
  // Linear-β schedule (β from 8.5e-4 to 1.2e-2 over 1000 steps, scaled-linear).
  static NoiseSchedule scaled_linear(int steps = 1000);
};

struct OracleHealth {
  std::string name;
  int schema_version = kProtocolVersion;
  std::vector<std::string> capabilities;
  NoiseSchedule schedule;
  int latent_channels = 4;
  int latent_downsample = 1;  // RGB pixels per latent pixel along each axis

  bool supports(const std::string& capability) const;
};

struct GenerateRequest {
  std::string prompt;
  int view_index = 0;
  Camera camera;
  ScalarImage depth;     // normalized inverse depth
  FeatureImage current;  // rendering of the current texture
  ScalarImage valid;     // 1 where the current rendering shows painted texels
  std::uint64_t seed = 0;
};

struct DenoiseRequest {
  FeatureImage q;        // clean render
  FeatureImage q_t;      // noised render
  FeatureImage noise;    // ε used to build q_t
  int t = 0;
  std::string prompt;
  Camera camera;
  std::uint64_t seed = 0;
};

struct DenoiseResponse {
  FeatureImage eps_hat;
  double u_t = 1.0;
};

struct SegmentRequest {
  FeatureImage image;  // RGB
  std::string keyword;
  int height = 0;      // requested output resolution
  int width = 0;
  Camera camera;
};

// Guidance capabilities (generation, denoising critic, segmentation,
// embeddings, latent autoencoder, landmarks). Unsupported capabilities throw
// a non-retryable OracleError.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual OracleHealth health() = 0;
  virtual FeatureImage generate(const GenerateRequest& request);
  virtual DenoiseResponse denoise(const DenoiseRequest& request);
  virtual ScalarImage segment(const SegmentRequest& request);
  virtual Eigen::VectorXd embed_image(const FeatureImage& image);
  // Vector-Jacobian product of embed_image: d<cotangent, z(image)>/d image.
  virtual FeatureImage embed_image_vjp(const FeatureImage& image, const Eigen::VectorXd& cotangent);
  virtual Eigen::VectorXd embed_text(const std::string& text);
  virtual FeatureImage encode(const FeatureImage& rgb);
  virtual FeatureImage decode(const FeatureImage& latent);
  virtual LandmarkSet landmarks(const FeatureImage& image);

 protected:
  [[noreturn]] void unsupported(const std::string& capability) const;
};

}  // namespace compav
