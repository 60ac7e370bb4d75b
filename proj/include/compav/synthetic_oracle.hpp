#pragma once

#include <functional>
#include <map>

#include "compav/oracle.hpp"
#include "compav/raster.hpp"

namespace compav {

// Generation oracle that returns one flat color for every view.
class ConstantColorOracle : public Oracle {
 public:
  explicit ConstantColorOracle(const Vec3& color) : color_(color) {}
  OracleHealth health() override;
  FeatureImage generate(const GenerateRequest& request) override;

 private:
  Vec3 color_;
};

// Generation oracle that renders a fixed ground-truth texture on a fixed
// mesh, so every view is consistent with one texture.
class TextureRenderOracle : public Oracle {
 public:
  TextureRenderOracle(Mesh mesh, TextureMap texture, TextureFilter filter = TextureFilter::bilinear)
      : mesh_(std::move(mesh)), bvh_(mesh_), texture_(std::move(texture)), filter_(filter) {}
  OracleHealth health() override;
  FeatureImage generate(const GenerateRequest& request) override;

 private:
  Mesh mesh_;
  MeshBvh bvh_;
  TextureMap texture_;
  TextureFilter filter_;
};

// Fixed linear RGB → 4-channel latent map and its left inverse.
struct LinearCodec {
  Eigen::Matrix<double, 4, 3> weight;
  Eigen::Vector4d bias;

  static LinearCodec standard();
  FeatureImage encode(const FeatureImage& rgb) const;
  FeatureImage decode(const FeatureImage& latent) const;
  Eigen::Vector4d encode(const Vec3& rgb) const { return weight * rgb + bias; }
};

// Deterministic stand-in for the guidance service. Every capability has a
// closed-form default; hooks replace individual behaviours.
//
// Critics:
//   perfect       ε̂ = ε, so the guidance gradient vanishes
//   linear        ε̂ = Q_t
//   ideal_target  ε̂ = (Q_t − √ᾱ Q*)/√(1−ᾱ) with Q* from `target`
//   zero          ε̂ = 0
class SyntheticOracle : public Oracle {
 public:
  enum class Critic { perfect, linear, ideal_target, zero };

  struct Options {
    std::string name = "synthetic";
    Critic critic = Critic::perfect;
    double u_scale = 1.0;  // u_t = u_scale · (1 − ᾱ_t)
    // Clean target Q* with the shape of request.q.
    std::function<FeatureImage(const DenoiseRequest&)> target;
    // Defaults: all-background mask, mid-gray views, no landmarks.
    std::function<ScalarImage(const SegmentRequest&)> segmenter;
    std::function<FeatureImage(const GenerateRequest&)> generator;
    std::function<LandmarkSet(const FeatureImage&)> landmarker;
    NoiseSchedule schedule = NoiseSchedule::scaled_linear();
    LinearCodec codec = LinearCodec::standard();
    int embedding_size = 16;
    int embedding_grid = 2;
    std::uint64_t seed = 0;
  };

  SyntheticOracle() : SyntheticOracle(Options{}) {}
  explicit SyntheticOracle(Options options) : options_(std::move(options)) {}

  Options& options() { return options_; }
  int calls(const std::string& capability) const;

  OracleHealth health() override;
  FeatureImage generate(const GenerateRequest& request) override;
  DenoiseResponse denoise(const DenoiseRequest& request) override;
  ScalarImage segment(const SegmentRequest& request) override;
  Eigen::VectorXd embed_image(const FeatureImage& image) override;
  FeatureImage embed_image_vjp(const FeatureImage& image, const Eigen::VectorXd& cotangent) override;
  Eigen::VectorXd embed_text(const std::string& text) override;
  FeatureImage encode(const FeatureImage& rgb) override;
  FeatureImage decode(const FeatureImage& latent) override;
  LandmarkSet landmarks(const FeatureImage& image) override;

 private:
  // Grid-pooled channel means and the projection applied to them.
  Eigen::VectorXd pool(const FeatureImage& image) const;
  MatX projection(int inputs) const;
  void count(const std::string& capability) { ++calls_[capability]; }

  Options options_;
  std::map<std::string, int> calls_;
};

}  // namespace compav
