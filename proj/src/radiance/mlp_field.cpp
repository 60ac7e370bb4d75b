#include "compav/mlp_field.hpp"

#include <cmath>
#include <numbers>

#include "compav/errors.hpp"
#include "compav/rng.hpp"

namespace compav {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

RgbAdapter fit_rgb_adapter(const MatX& latents, const MatX& rgb) {
  if (latents.cols() != 4 || rgb.cols() != 3 || latents.rows() != rgb.rows())
    throw ParameterError("fit_rgb_adapter: expected N×4 latents and N×3 colors");
  if (latents.rows() < 5) throw ConfigError("fit_rgb_adapter: need at least 5 calibration pairs");
  MatX design(latents.rows(), 5);
  design.leftCols(4) = latents;
  design.col(4).setOnes();
  const MatX solution = design.colPivHouseholderQr().solve(rgb);  // 5 × 3
  RgbAdapter a;
  a.weight = solution.topRows(4).transpose();
  a.bias = solution.row(4).transpose();
  return a;
}

void positional_encoding(const Vec3& p, int bands, double* out) {
  for (int a = 0; a < 3; ++a) out[a] = p[a];
  int k = 3;
  for (int b = 0; b < bands; ++b) {
    const double f = std::ldexp(std::numbers::pi, b);
    for (int a = 0; a < 3; ++a) {
      out[k++] = std::sin(f * p[a]);
      out[k++] = std::cos(f * p[a]);
    }
  }
}

MlpField::MlpField(const FieldArchitecture& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.hidden < 1 || arch.layers < 1 || arch.pos_bands < 0 || arch.dir_bands < 0)
    throw ConfigError("field architecture: sizes must be positive");
  if (arch.channels != 3 && arch.channels != 4) throw ConfigError("field architecture: channels must be 3 or 4");
  build_layout();
  Rng rng(seed);
  params_ = VecX::Zero(params_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const bool head = l + 1 == layers_.size();
    const double scale = head ? std::sqrt(1.0 / L.cols) : std::sqrt(2.0 / L.cols);
    for (int i = 0; i < L.rows * L.cols; ++i) params_[L.weight + i] = scale * rng.normal();
  }
  params_[layers_.back().bias] = arch.density_bias;
}

void MlpField::build_layout() {
  layers_.clear();
  int offset = 0;
  int in = arch_.input_size();
  for (int l = 0; l <= arch_.layers; ++l) {
    const int out = l < arch_.layers ? arch_.hidden : 1 + arch_.channels;
    layers_.push_back({out, in, offset, offset + out * in});
    offset += out * in + out;
    in = out;
  }
  adapter_offset_ = offset;
  params_.resize(offset + (adapter_enabled_ ? 15 : 0));
}

void MlpField::attach_adapter(const RgbAdapter& adapter) {
  if (arch_.channels != 4) throw ConfigError("rgb adapter needs a 4-channel head");
  if (!adapter_enabled_) {
    VecX grown(params_.size() + 15);
    grown.head(params_.size()) = params_;
    params_ = std::move(grown);
    adapter_enabled_ = true;
  }
  Eigen::Map<Eigen::Matrix<double, 3, 4>>(params_.data() + adapter_offset_) = adapter.weight;
  params_.segment<3>(adapter_offset_ + 12) = adapter.bias;
}

RgbAdapter MlpField::adapter() const {
  if (!adapter_enabled_) throw ConfigError("field has no rgb adapter");
  RgbAdapter a;
  a.weight = Eigen::Map<const Eigen::Matrix<double, 3, 4>>(params_.data() + adapter_offset_);
  a.bias = params_.segment<3>(adapter_offset_ + 12);
  return a;
}

void MlpField::round_to_float32() {
  for (double& v : params_) v = static_cast<double>(static_cast<float>(v));
}

void MlpField::evaluate(const Points& positions, const Points& directions, VecX& sigma, MatX& color) const {
  forward(positions, directions, sigma, color, nullptr);
}

void MlpField::forward(const Points& positions, const Points& directions, VecX& sigma, MatX& color, Tape* tape) const {
  const Eigen::Index n = positions.rows();
  MatX input(n, arch_.input_size());
  std::vector<double> row(static_cast<std::size_t>(arch_.input_size()));
  const int pos_size = 3 + 6 * arch_.pos_bands;
  for (Eigen::Index i = 0; i < n; ++i) {
    positional_encoding(positions.row(i).transpose(), arch_.pos_bands, row.data());
    positional_encoding(directions.row(i).transpose(), arch_.dir_bands, row.data() + pos_size);
    for (int k = 0; k < arch_.input_size(); ++k) input(i, k) = row[static_cast<std::size_t>(k)];
  }
  MatX act = std::move(input);
  if (tape) {
    tape->input = act;
    tape->activations.clear();
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const Eigen::Map<const MatX> w(params_.data() + L.weight, L.rows, L.cols);
    const Eigen::Map<const VecX> b(params_.data() + L.bias, L.rows);
    MatX z = act * w.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < layers_.size()) {
      act = z.cwiseMax(0.0);
      if (tape) tape->activations.push_back(act);
    } else {
      act = std::move(z);
    }
  }
  sigma.resize(n);
  color.resize(n, channels());
  for (Eigen::Index i = 0; i < n; ++i) sigma[i] = softplus(act(i, 0));
  if (adapter_enabled_) {
    const auto a = adapter();
    color = act.rightCols(4) * a.weight.transpose();
    color.rowwise() += a.bias.transpose();
  } else if (arch_.channels == 3) {
    color = act.rightCols(3).unaryExpr([](double z) { return sigmoid(z); });
  } else {
    color = act.rightCols(arch_.channels);
  }
  if (tape) tape->head = std::move(act);
}

void MlpField::backward(const Tape& tape, const VecX& dsigma, const MatX& dcolor, VecX& grad) const {
  if (grad.size() != params_.size()) grad = VecX::Zero(params_.size());
  const Eigen::Index n = tape.head.rows();
  const int out = 1 + arch_.channels;
  MatX dz(n, out);
  for (Eigen::Index i = 0; i < n; ++i) dz(i, 0) = dsigma[i] * sigmoid(tape.head(i, 0));
  if (adapter_enabled_) {
    const auto a = adapter();
    dz.rightCols(4) = dcolor * a.weight;
    Eigen::Map<Eigen::Matrix<double, 3, 4>>(grad.data() + adapter_offset_) += dcolor.transpose() * tape.head.rightCols(4);
    grad.segment<3>(adapter_offset_ + 12) += dcolor.colwise().sum().transpose();
  } else if (arch_.channels == 3) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) {
        const double s = sigmoid(tape.head(i, 1 + c));
        dz(i, 1 + c) = dcolor(i, c) * s * (1.0 - s);
      }
  } else {
    dz.rightCols(arch_.channels) = dcolor;
  }
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const Layer& L = layers_[static_cast<std::size_t>(l)];
    const MatX& prev = l == 0 ? tape.input : tape.activations[static_cast<std::size_t>(l - 1)];
    Eigen::Map<MatX>(grad.data() + L.weight, L.rows, L.cols) += dz.transpose() * prev;
    Eigen::Map<VecX>(grad.data() + L.bias, L.rows) += dz.colwise().sum().transpose();
    if (l == 0) break;
    const Eigen::Map<const MatX> w(params_.data() + L.weight, L.rows, L.cols);
    MatX dprev = dz * w;
    dz = dprev.cwiseProduct((prev.array() > 0.0).cast<double>().matrix());
  }
}

}  // namespace compav
