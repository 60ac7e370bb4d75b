#include "compav/losses.hpp"

#include <algorithm>
#include <cmath>

#include "compav/errors.hpp"

namespace compav {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ParameterError(std::string(what) + ": mask sizes differ (" + std::to_string(a) + " vs " +
                                   std::to_string(b) + ")");
  if (a == 0) throw ParameterError(std::string(what) + ": empty mask");
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace

double mask_loss(std::span<const double> omega, std::span<const double> omega_hat) {
  check_sizes(omega.size(), omega_hat.size(), "mask_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < omega.size(); ++i) s += std::abs(omega[i] - omega_hat[i]);
  return s / static_cast<double>(omega.size());
}

void mask_loss_grad(std::span<const double> omega, std::span<const double> omega_hat, double weight,
                    std::span<double> grad) {
  check_sizes(omega.size(), omega_hat.size(), "mask_loss");
  check_sizes(grad.size(), omega_hat.size(), "mask_loss");
  const double scale = weight / static_cast<double>(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i) {
    const double d = omega_hat[i] - omega[i];
    grad[i] += scale * static_cast<double>((d > 0.0) - (d < 0.0));
  }
}

double binary_entropy(double a) { return -xlogx(a) - xlogx(1.0 - a); }

double sparsity_loss(std::span<const double> omega_hat) {
  double s = 0.0;
  for (double a : omega_hat) s += binary_entropy(std::clamp(a, 0.0, 1.0));
  return s;
}

void sparsity_loss_grad(std::span<const double> omega_hat, double weight, std::span<double> grad) {
  check_sizes(grad.size(), omega_hat.size(), "sparsity_loss");
  for (std::size_t i = 0; i < omega_hat.size(); ++i) {
    const double a = std::clamp(omega_hat[i], 1e-6, 1.0 - 1e-6);
    grad[i] += weight * std::log((1.0 - a) / a);
  }
}

double similarity_loss(const Eigen::VectorXd& z_img, const Eigen::VectorXd& z_text) {
  if (z_img.size() != z_text.size()) throw ParameterError("similarity_loss: embedding sizes differ");
  const double na = z_img.norm(), nb = z_text.norm();
  if (na == 0.0 || nb == 0.0) throw ParameterError("similarity_loss: zero-norm embedding");
  return -z_img.dot(z_text) / (na * nb);
}

Eigen::VectorXd similarity_loss_grad(const Eigen::VectorXd& z_img, const Eigen::VectorXd& z_text) {
  const double cos = -similarity_loss(z_img, z_text);
  const double na = z_img.norm(), nb = z_text.norm();
  return -(z_text / (na * nb) - cos * z_img / (na * na));
}

SdsResult sds_gradient(const FeatureImage& render, const std::string& prompt, Oracle& oracle,
                       const NoiseSchedule& schedule, int t_lo, int t_hi, Rng& rng, const Camera& camera) {
  if (t_lo > t_hi) throw ParameterError("sds_gradient: empty timestep range");
  SdsResult r;
  r.t = rng.uniform_int(t_lo, t_hi);
  const double ab = schedule.alpha_bar(r.t);
  r.noise = FeatureImage(render.height, render.width, render.channels);
  r.noised = r.noise;
  for (std::size_t i = 0; i < render.data.size(); ++i) {
    r.noise.data[i] = rng.normal();
    r.noised.data[i] = std::sqrt(ab) * render.data[i] + std::sqrt(1.0 - ab) * r.noise.data[i];
  }
  DenoiseRequest req;
  req.q = render;
  req.q_t = r.noised;
  req.noise = r.noise;
  req.t = r.t;
  req.prompt = prompt;
  req.camera = camera;
  req.seed = rng.next();
  DenoiseResponse resp = oracle.denoise(req);
  if (!resp.eps_hat.same_shape(render))
    throw OracleError("denoise returned a prediction of the wrong shape", false);
  r.u_t = resp.u_t;
  r.eps_hat = std::move(resp.eps_hat);
  r.gradient = FeatureImage(render.height, render.width, render.channels);
  for (std::size_t i = 0; i < render.data.size(); ++i)
    r.gradient.data[i] = r.u_t * (r.eps_hat.data[i] - r.noise.data[i]);
  return r;
}

}  // namespace compav
