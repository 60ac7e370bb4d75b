#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "compav/avatar.hpp"
#include "compav/losses.hpp"

namespace compav {

struct CameraSampling {
  double distance = 2.5;
  double fov = 40.0;
  double elevation_min = -10.0;
  double elevation_max = 30.0;
  double radius_jitter = 0.1;  // radius scaled by U[1 − j, 1 + j]

  struct Sample {
    Camera camera;
    double azimuth = 0.0;
    double elevation = 0.0;
    double radius = 0.0;
  };
  Sample sample(Rng& rng, int width, int height) const;
};

struct TrainConfig {
  int iterations = 2000;
  double learning_rate = 1e-3;
  int width = 64;
  int height = 64;
  RenderOptions rays;
  LossWeights weights;
  int segment_every = 10;  // mask loss only on refresh iterations
  CameraSampling cameras;
  // Over the last `anneal_fraction` of the run the upper timestep bound
  // moves linearly from t_max to t_min + anneal_floor·(t_max − t_min).
  double anneal_fraction = 0.2;
  double anneal_floor = 0.5;
  FieldArchitecture architecture;
  CanonicalFrame frame;
  std::uint64_t seed = 0;
  int oracle_retries = 2;
  std::string component_id = "component";
  std::filesystem::path log_path;        // JSON lines, optional
  std::filesystem::path checkpoint_dir;  // optional
  int checkpoint_every = 0;              // 0: only on abort and at the end

  nlohmann::json to_json() const;
};

struct RefineConfig : TrainConfig {
  // Calibration pairs for the RGB adapter: N × 4 latents and N × 3 colors.
  MatX calibration_latents;
  MatX calibration_rgb;

  RefineConfig() {
    width = 480;
    height = 480;
    rays.samples = 128;
  }
};

struct TrainResult {
  RadianceComponent component;
  std::vector<nlohmann::json> log;
};

// Latent-space component training against the rig (with its attached
// components as the background). Parameters are snapped to float32 at the end.
TrainResult train_component(const AvatarRig& rig, const std::string& prompt, const std::string& keyword,
                            Oracle& oracle, const TrainConfig& config);

// RGB refinement: fits the adapter from the calibration pairs, then
// optimizes SDS (in RGB), mask, sparsity and similarity terms.
TrainResult refine_component(const RadianceComponent& component, const AvatarRig& rig, const std::string& prompt,
                             Oracle& oracle, const RefineConfig& config);

// Calibration pairs from random colors pushed through the oracle encoder.
void calibration_pairs(Oracle& oracle, int count, std::uint64_t seed, MatX& latents, MatX& rgb);

// t upper bound for iteration `it` of `iterations`.
int annealed_t_max(const NoiseSchedule& schedule, int it, int iterations, double fraction, double floor);

}  // namespace compav
