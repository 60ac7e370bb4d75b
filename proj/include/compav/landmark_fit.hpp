#pragma once

#include <filesystem>
#include <vector>

#include "compav/body_model.hpp"

namespace compav {

// Detected 3D landmarks e_i with their model correspondences κ(i).
struct LandmarkSet {
  Points points;             // n_e × 3
  std::vector<int> vertices; // κ
  VecX confidence;           // n_e, in [0, 1]

  int size() const { return static_cast<int>(vertices.size()); }
};

struct FitConfig {
  int max_iters = 2000;
  double learning_rate = 1e-3;
  double reg_weight_shape = 5e-5;
  double reg_weight_expr = 5e-5;
  // Stop once |ΔL| stays below this for `patience` consecutive iterations.
  double tolerance = 1e-10;
  int patience = 25;
  // |x| ≈ sqrt(x² + ε²) − ε
  double l1_epsilon = 1e-8;
  bool optimize_pose = true;
  bool optimize_expression = true;
};

struct FitResult {
  AvatarParams params;     // rig parameters: (β*, θ^c, 0)
  AvatarParams optimized;  // raw optimum (β*, θ*, ψ*)
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Σ_i c_i ‖v_κ(i) − e_i‖₁ + w_β‖β‖² + w_ψ‖ψ‖², with the smoothed absolute value.
double fit_residual(const BodyModel& model, const AvatarParams& params, const LandmarkSet& landmarks,
                    const FitConfig& config = {});

struct ResidualGradient {
  double loss = 0.0;
  ParamGradient grad;
};
ResidualGradient fit_residual_gradient(const BodyModel& model, const AvatarParams& params,
                                       const LandmarkSet& landmarks, const FitConfig& config = {});

// Throws FitError for fewer than 4 landmarks or collinear targets.
FitResult fit_shape(const BodyModel& model, const LandmarkSet& landmarks, const FitConfig& config = {});

// Landmark file: JSON array of {"index": i | "name": s, "xyz": [x,y,z],
// "confidence": c}. "index" refers to the model's ordered landmark table.
LandmarkSet load_landmarks(const std::filesystem::path& path, const BodyModel& model);
void save_landmarks(const LandmarkSet& landmarks, const BodyModel& model, const std::filesystem::path& path);

}  // namespace compav
