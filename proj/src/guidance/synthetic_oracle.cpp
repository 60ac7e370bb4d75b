#include "compav/synthetic_oracle.hpp"

#include <Eigen/QR>
#include <cmath>

#include "compav/errors.hpp"
#include "compav/rng.hpp"

namespace compav {

OracleHealth ConstantColorOracle::health() {
  OracleHealth h;
  h.name = "constant-color";
  h.capabilities = {"generate"};
  h.schedule = NoiseSchedule::scaled_linear();
  return h;
}

FeatureImage ConstantColorOracle::generate(const GenerateRequest& request) {
  FeatureImage img(request.camera.height, request.camera.width, 3);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    for (int ch = 0; ch < 3; ++ch) img.data[p * 3 + ch] = color_[ch];
    img.alpha[p] = 1.0;
  }
  return img;
}

OracleHealth TextureRenderOracle::health() {
  OracleHealth h;
  h.name = "texture-render";
  h.capabilities = {"generate"};
  h.schedule = NoiseSchedule::scaled_linear();
  return h;
}

FeatureImage TextureRenderOracle::generate(const GenerateRequest& request) {
  return shade(rasterize_fragments(mesh_, bvh_, request.camera), texture_, filter_);
}

LinearCodec LinearCodec::standard() {
  LinearCodec c;
  c.weight << 0.9, 0.3, 0.1,
              -0.2, 0.8, 0.4,
              0.3, -0.4, 0.9,
              0.5, 0.5, -0.6;
  c.bias << -0.4, -0.3, -0.2, 0.1;
  return c;
}

FeatureImage LinearCodec::encode(const FeatureImage& rgb) const {
  if (rgb.channels != 3) throw ParameterError("encode expects a 3-channel image");
  FeatureImage out(rgb.height, rgb.width, 4);
  out.alpha = rgb.alpha;
  for (std::size_t p = 0; p < rgb.pixel_count(); ++p) {
    const Vec3 c(rgb.data[3 * p], rgb.data[3 * p + 1], rgb.data[3 * p + 2]);
    Eigen::Map<Eigen::Vector4d>(out.data.data() + 4 * p) = encode(c);
  }
  return out;
}

FeatureImage LinearCodec::decode(const FeatureImage& latent) const {
  if (latent.channels != 4) throw ParameterError("decode expects a 4-channel latent");
  const Eigen::Matrix<double, 3, 4> inv = weight.completeOrthogonalDecomposition().pseudoInverse();
  FeatureImage out(latent.height, latent.width, 3);
  out.alpha = latent.alpha;
  for (std::size_t p = 0; p < latent.pixel_count(); ++p) {
    const Eigen::Vector4d z(latent.data.data() + 4 * p);
    Eigen::Map<Vec3>(out.data.data() + 3 * p) = inv * (z - bias);
  }
  return out;
}

int SyntheticOracle::calls(const std::string& capability) const {
  auto it = calls_.find(capability);
  return it == calls_.end() ? 0 : it->second;
}

OracleHealth SyntheticOracle::health() {
  count("health");
  OracleHealth h;
  h.name = options_.name;
  h.capabilities = {"generate", "denoise", "segment", "embed_image", "embed_image_vjp", "embed_text",
                    "encode", "decode", "landmarks"};
  h.schedule = options_.schedule;
  h.latent_channels = 4;
  h.latent_downsample = 1;
  return h;
}

FeatureImage SyntheticOracle::generate(const GenerateRequest& request) {
  count("generate");
  if (options_.generator) return options_.generator(request);
  FeatureImage img(request.camera.height, request.camera.width, 3, 0.5);
  std::fill(img.alpha.begin(), img.alpha.end(), 1.0);
  return img;
}

DenoiseResponse SyntheticOracle::denoise(const DenoiseRequest& request) {
  count("denoise");
  if (!request.q_t.same_shape(request.q) || !request.noise.same_shape(request.q))
    throw OracleError("denoise: q, q_t and noise shapes differ", false);
  const double ab = options_.schedule.alpha_bar(request.t);
  DenoiseResponse r;
  r.u_t = options_.u_scale * (1.0 - ab);
  r.eps_hat = FeatureImage(request.q.height, request.q.width, request.q.channels);
  switch (options_.critic) {
    case Critic::perfect:
      r.eps_hat.data = request.noise.data;
      break;
    case Critic::linear:
      r.eps_hat.data = request.q_t.data;
      break;
    case Critic::zero:
      break;
    case Critic::ideal_target: {
      if (!options_.target) throw OracleError("denoise: no target configured", false);
      const FeatureImage target = options_.target(request);
      if (!target.same_shape(request.q)) throw OracleError("denoise: target has the wrong shape", false);
      const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
      for (std::size_t i = 0; i < target.data.size(); ++i)
        r.eps_hat.data[i] = (request.q_t.data[i] - sa * target.data[i]) / sb;
      break;
    }
  }
  return r;
}

ScalarImage SyntheticOracle::segment(const SegmentRequest& request) {
  count("segment");
  const int h = request.height > 0 ? request.height : request.image.height;
  const int w = request.width > 0 ? request.width : request.image.width;
  ScalarImage out = options_.segmenter ? options_.segmenter(request) : ScalarImage(h, w, 0.0);
  if (out.height != h || out.width != w) throw OracleError("segment: mask has the wrong size", false);
  return out;
}

Eigen::VectorXd SyntheticOracle::pool(const FeatureImage& image) const {
  const int g = options_.embedding_grid;
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(g * g * image.channels);
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b) {
      const int r0 = a * image.height / g, r1 = (a + 1) * image.height / g;
      const int c0 = b * image.width / g, c1 = (b + 1) * image.width / g;
      const int n = (r1 - r0) * (c1 - c0);
      if (n == 0) continue;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          for (int ch = 0; ch < image.channels; ++ch)
            pooled[(a * g + b) * image.channels + ch] += image.at(r, c, ch) / n;
    }
  return pooled;
}

MatX SyntheticOracle::projection(int inputs) const {
  Rng rng(Rng::derive_seed(options_.seed, "embed_image"));
  MatX p(options_.embedding_size, inputs);
  for (int r = 0; r < p.rows(); ++r)
    for (int c = 0; c < p.cols(); ++c) p(r, c) = rng.normal();
  return p;
}

Eigen::VectorXd SyntheticOracle::embed_image(const FeatureImage& image) {
  count("embed_image");
  const Eigen::VectorXd pooled = pool(image);
  return projection(static_cast<int>(pooled.size())) * pooled;
}

FeatureImage SyntheticOracle::embed_image_vjp(const FeatureImage& image, const Eigen::VectorXd& cotangent) {
  count("embed_image_vjp");
  if (cotangent.size() != options_.embedding_size) throw OracleError("embed_image_vjp: cotangent size", false);
  const int g = options_.embedding_grid;
  const Eigen::VectorXd gp = projection(g * g * image.channels).transpose() * cotangent;
  FeatureImage out(image.height, image.width, image.channels);
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b) {
      const int r0 = a * image.height / g, r1 = (a + 1) * image.height / g;
      const int c0 = b * image.width / g, c1 = (b + 1) * image.width / g;
      const int n = (r1 - r0) * (c1 - c0);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c)
          for (int ch = 0; ch < image.channels; ++ch)
            out.at(r, c, ch) = gp[(a * g + b) * image.channels + ch] / n;
    }
  return out;
}

Eigen::VectorXd SyntheticOracle::embed_text(const std::string& text) {
  count("embed_text");
  Rng rng(Rng::derive_seed(options_.seed, "text:" + text));
  Eigen::VectorXd z(options_.embedding_size);
  for (auto& v : z) v = rng.normal();
  return z;
}

FeatureImage SyntheticOracle::encode(const FeatureImage& rgb) {
  count("encode");
  return options_.codec.encode(rgb);
}

FeatureImage SyntheticOracle::decode(const FeatureImage& latent) {
  count("decode");
  return options_.codec.decode(latent);
}

LandmarkSet SyntheticOracle::landmarks(const FeatureImage& image) {
  count("landmarks");
  if (options_.landmarker) return options_.landmarker(image);
  throw OracleError("landmarks: no detector configured", false);
}

}  // namespace compav
