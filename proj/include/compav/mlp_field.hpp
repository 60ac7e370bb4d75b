#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "compav/radiance.hpp"

namespace compav {

struct FieldArchitecture {
  int hidden = 64;
  int layers = 3;
  int pos_bands = 10;
  int dir_bands = 4;
  int channels = 4;             // head feature channels: 4 latent, 3 RGB
  double density_bias = -1.0;   // initial pre-softplus density offset

  int input_size() const { return 6 + 6 * pos_bands + 6 * dir_bands; }
  bool operator==(const FieldArchitecture&) const = default;
};

// Affine latent → RGB map appended after the head.
struct RgbAdapter {
  Eigen::Matrix<double, 3, 4> weight = Eigen::Matrix<double, 3, 4>::Zero();
  Vec3 bias = Vec3::Zero();
};

// Least-squares affine fit from calibration pairs (rows are samples).
RgbAdapter fit_rgb_adapter(const MatX& latents, const MatX& rgb);

// [p, sin(2^k π p), cos(2^k π p)] for k < bands, per coordinate.
void positional_encoding(const Vec3& p, int bands, double* out);

// Fully connected ReLU network over encoded (position, direction) with a
// softplus density and a feature head (linear for latents, sigmoid for RGB,
// or linear latents followed by the RGB adapter).
class MlpField : public RadianceField {
 public:
  struct Tape {
    MatX input;
    std::vector<MatX> activations;  // post-ReLU per hidden layer
    MatX head;                      // raw head outputs, N × (1 + head channels)
  };

  MlpField() = default;
  MlpField(const FieldArchitecture& arch, std::uint64_t seed);

  const FieldArchitecture& architecture() const { return arch_; }
  int channels() const override { return adapter_enabled_ ? 3 : arch_.channels; }
  bool rgb() const { return channels() == 3; }

  void evaluate(const Points& positions, const Points& directions, VecX& sigma, MatX& color) const override;
  void forward(const Points& positions, const Points& directions, VecX& sigma, MatX& color, Tape* tape) const;
  // Accumulates ∂L/∂params into grad given ∂L/∂sigma and ∂L/∂color.
  void backward(const Tape& tape, const VecX& dsigma, const MatX& dcolor, VecX& grad) const;

  VecX& parameters() { return params_; }
  const VecX& parameters() const { return params_; }
  int parameter_count() const { return static_cast<int>(params_.size()); }

  // Appends (or replaces) the adapter; the head must produce 4 channels.
  void attach_adapter(const RgbAdapter& adapter);
  bool has_adapter() const { return adapter_enabled_; }
  RgbAdapter adapter() const;

  // Snap parameters to float32 precision (the checkpoint format).
  void round_to_float32();

  bool operator==(const MlpField& o) const {
    return arch_ == o.arch_ && adapter_enabled_ == o.adapter_enabled_ && params_ == o.params_;
  }

 private:
  struct Layer {
    int rows, cols;  // weight is rows × cols, column-major in params_
    int weight, bias;
  };
  void build_layout();

  FieldArchitecture arch_;
  std::vector<Layer> layers_;  // hidden layers then head
  int adapter_offset_ = -1;
  bool adapter_enabled_ = false;
  VecX params_;
};

}  // namespace compav
