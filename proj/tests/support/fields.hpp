#pragma once

// Analytic radiance fields for rendering tests.

#include <cmath>

#include "compav/radiance.hpp"
#include "compav/rng.hpp"

namespace compav::testing {

class ConstantField : public RadianceField {
 public:
  ConstantField(double sigma, VecX color) : sigma_(sigma), color_(std::move(color)) {}
  int channels() const override { return static_cast<int>(color_.size()); }
  void evaluate(const Points& x, const Points&, VecX& sigma, MatX& color) const override {
    sigma = VecX::Constant(x.rows(), sigma_);
    color = color_.transpose().replicate(x.rows(), 1);
  }

 private:
  double sigma_;
  VecX color_;
};

class SphereField : public RadianceField {
 public:
  SphereField(Vec3 center, double radius, double density, VecX color)
      : center_(center), radius_(radius), density_(density), color_(std::move(color)) {}
  int channels() const override { return static_cast<int>(color_.size()); }
  void evaluate(const Points& x, const Points&, VecX& sigma, MatX& color) const override {
    sigma.resize(x.rows());
    color = color_.transpose().replicate(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      sigma[i] = (x.row(i).transpose() - center_).norm() < radius_ ? density_ : 0.0;
  }

 private:
  Vec3 center_;
  double radius_, density_;
  VecX color_;
};

// Smooth random density and features built from a few sinusoids.
class WavyField : public RadianceField {
 public:
  WavyField(int channels, std::uint64_t seed) : channels_(channels) {
    Rng rng(seed);
    freq_ = MatX(1 + channels, 3);
    phase_ = VecX(1 + channels);
    for (Eigen::Index i = 0; i < freq_.size(); ++i) freq_.data()[i] = rng.uniform(-3, 3);
    for (Eigen::Index i = 0; i < phase_.size(); ++i) phase_[i] = rng.uniform(0, 6);
  }
  int channels() const override { return channels_; }
  void evaluate(const Points& x, const Points&, VecX& sigma, MatX& color) const override {
    sigma.resize(x.rows());
    color.resize(x.rows(), channels_);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vec3 p = x.row(i).transpose();
      sigma[i] = 2.0 + 2.0 * std::sin(freq_.row(0).dot(p) + phase_[0]);
      for (int c = 0; c < channels_; ++c) color(i, c) = std::sin(freq_.row(1 + c).dot(p) + phase_[1 + c]);
    }
  }

 private:
  int channels_;
  MatX freq_;
  VecX phase_;
};

}  // namespace compav::testing
