#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "compav/mesh.hpp"
#include "compav/oracle.hpp"
#include "compav/raster.hpp"

namespace compav {

struct ViewSpec {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double distance = 2.5;
  double fov_y_deg = 40.0;
  int width = 512;
  int height = 512;

  Camera camera() const { return Camera::orbit(azimuth_deg, elevation_deg, distance, width, height, fov_y_deg); }
};

// Ordered painting views. mirror[i] == i means the view is regularized by its
// own horizontally flipped generation; mirror[i] == j (j < i) pairs it with
// view j's flipped generation; -1 means no symmetry term.
struct ViewSchedule {
  std::vector<ViewSpec> views;
  std::vector<int> mirror;

  // Front; left/right pairs at 45°, 90°, 135°; an elevated 45° pair; back.
  static ViewSchedule standard(int resolution = 512, double distance = 2.5, double fov_y_deg = 40.0);
  void validate() const;
  std::string hash() const;
  nlohmann::json to_json() const;
  static ViewSchedule from_json(const nlohmann::json& j);
};

ViewSchedule load_view_schedule(const std::filesystem::path& path);

struct PaintConfig {
  int uv_height = 512;
  int uv_width = 512;
  Vec3 init_color = Vec3::Constant(0.5);
  int steps = 200;
  double learning_rate = 0.01;
  double early_stop = 1e-5;      // stop once |Δloss| stays below this
  int early_stop_patience = 10;  // for this many consecutive steps
  double lambda_sym = 0.5;
  TextureFilter filter = TextureFilter::nearest;
  std::uint64_t seed = 0;
};

// Mean squared error over all pixels and channels.
double symmetry_loss(const FeatureImage& render, const FeatureImage& mirror_target);

struct ProjectResult {
  TextureMap texture;
  double loss = 0.0;
  int steps = 0;
};

// Minimizes mean L1 between the rendering and `target` over covered pixels
// (plus lambda_sym times the MSE to `mirror_target` when given), updating only
// texels visible in this view.
ProjectResult project_view(const TextureMap& previous, const FeatureImage& target, const Camera& camera,
                           const Mesh& mesh, const PaintConfig& config, const FeatureImage* mirror_target = nullptr);

// Runs the full schedule. When checkpoint_dir is non-empty each completed view
// is persisted there and a later call resumes after the last completed view.
TextureMap paint_texture(const Mesh& mesh, const ViewSchedule& schedule, Oracle& oracle, const std::string& prompt,
                         const PaintConfig& config, const std::filesystem::path& checkpoint_dir = {});

}  // namespace compav
