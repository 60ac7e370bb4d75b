#pragma once

#include <span>
#include <string>
#include <vector>

#include "compav/oracle.hpp"
#include "compav/rng.hpp"

namespace compav {

struct LossWeights {
  double mask = 0.1;
  double sparse = 0.0005;
  double sim = 1.0;
  double sym = 0.5;
};

// Mean absolute difference between a segmentation mask and the rendered mask.
double mask_loss(std::span<const double> omega, std::span<const double> omega_hat);
// ∂/∂Ω̂, added into grad (scaled by weight).
void mask_loss_grad(std::span<const double> omega, std::span<const double> omega_hat, double weight,
                    std::span<double> grad);

// Binary entropy −a ln a − (1−a) ln(1−a), with 0 ln 0 = 0.
double binary_entropy(double a);
// Σ_pixels binary_entropy(Ω̂).
double sparsity_loss(std::span<const double> omega_hat);
// Derivative ln((1−a)/a), evaluated with a clamped to [1e-6, 1 − 1e-6].
void sparsity_loss_grad(std::span<const double> omega_hat, double weight, std::span<double> grad);

// −cos(z_img, z_text); throws ParameterError for zero vectors.
double similarity_loss(const Eigen::VectorXd& z_img, const Eigen::VectorXd& z_text);
Eigen::VectorXd similarity_loss_grad(const Eigen::VectorXd& z_img, const Eigen::VectorXd& z_text);

struct SdsResult {
  int t = 0;
  double u_t = 0.0;
  FeatureImage noise;
  FeatureImage noised;
  FeatureImage eps_hat;
  FeatureImage gradient;  // u_t (ε̂ − ε), same shape as the render
};

// Draws t uniformly from [t_lo, t_hi] and ε ~ N(0, I), forms
// Q_t = √ᾱ_t Q + √(1−ᾱ_t) ε and queries the critic.
SdsResult sds_gradient(const FeatureImage& render, const std::string& prompt, Oracle& oracle,
                       const NoiseSchedule& schedule, int t_lo, int t_hi, Rng& rng, const Camera& camera = {});

}  // namespace compav
