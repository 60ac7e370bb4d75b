#include "compav/procedural.hpp"

#include <cmath>

#include "compav/errors.hpp"

namespace compav {

bool ShellSpec::contains(const Vec3& x) const {
  if (x.y() < y_min) return false;
  return ((x - center).array() / radii.array()).matrix().squaredNorm() <= 1.0;
}

void ShellField::evaluate(const Points& x, const Points&, VecX& sigma, MatX& color) const {
  sigma.resize(x.rows());
  color = color_.transpose().replicate(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    sigma[i] = spec_.contains(x.row(i).transpose()) ? spec_.density : 0.0;
}

TextureMap procedural_texture(int height, int width) {
  TextureMap tex(height, width);
  const Vec3 skin(0.86, 0.66, 0.54), brow(0.30, 0.20, 0.14), lip(0.70, 0.30, 0.32), eye(0.15, 0.12, 0.10);
  auto blob = [](double du, double dv, double su, double sv) {
    return std::exp(-0.5 * (du * du / (su * su) + dv * dv / (sv * sv)));
  };
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const double u = (c + 0.5) / width, v = (r + 0.5) / height;
      const double du = std::abs(u - 0.5);  // mirror-symmetric about the front
      Vec3 col = skin * (0.9 + 0.1 * v);
      const double wb = blob(du - 0.07, v - 0.53, 0.04, 0.01);
      const double we = blob(du - 0.07, v - 0.50, 0.025, 0.012);
      const double wl = blob(du, v - 0.42, 0.05, 0.008);
      col = (1 - wb) * col + wb * brow;
      col = (1 - we) * col + we * eye;
      col = (1 - wl) * col + wl * lip;
      for (int ch = 0; ch < 3; ++ch) tex.at(r, c, ch) = col[ch];
    }
  return tex;
}

namespace {

VecX shell_color(const ShellSpec& shell, RenderSpace space, const LinearCodec& codec) {
  if (space == RenderSpace::rgb) return shell.color;
  return codec.encode(shell.color);
}

class CodecEncoder : public Oracle {
 public:
  explicit CodecEncoder(const LinearCodec& codec) : codec_(codec) {}
  OracleHealth health() override { return {}; }
  FeatureImage encode(const FeatureImage& rgb) override { return codec_.encode(rgb); }

 private:
  const LinearCodec& codec_;
};

FeatureImage shell_pass(const AvatarRig& rig, const ShellSpec& shell, const Camera& camera, RenderSpace space,
                        const LinearCodec& codec, const RenderOptions& rays) {
  const PosedBody body(*rig.model, rig.params, rig.frame());
  CodecEncoder encoder(codec);
  AvatarRenderOptions opt;
  opt.space = space;
  opt.rays = rays;
  const BaseLayer base = base_layer(rig, body, camera, opt, &encoder);
  const AvatarRender below = composite_components(rig, body, camera, base, opt);
  const ShellField field(shell, shell_color(shell, space, codec));
  return render_image(field, camera, &body, {&base.fragments, &below.image}, rays);
}

}  // namespace

FeatureImage render_shell(const AvatarRig& rig, const ShellSpec& shell, const Camera& camera, RenderSpace space,
                          const LinearCodec& codec, const RenderOptions& rays) {
  return shell_pass(rig, shell, camera, space, codec, rays);
}

ScalarImage shell_silhouette(const AvatarRig& rig, const ShellSpec& shell, const Camera& camera,
                             const RenderOptions& rays) {
  const FeatureImage img = shell_pass(rig, shell, camera, RenderSpace::rgb, LinearCodec::standard(), rays);
  ScalarImage out(camera.height, camera.width);
  for (std::size_t p = 0; p < out.size(); ++p) out.values[p] = img.alpha[p] > 0.5 ? 1.0 : 0.0;
  return out;
}

std::unique_ptr<SyntheticOracle> make_procedural_oracle(const AvatarRig& rig, const ProceduralSetup& setup) {
  if (!rig.model) throw ParameterError("procedural oracle: rig has no model");
  SyntheticOracle::Options opt;
  opt.name = "procedural";
  opt.critic = SyntheticOracle::Critic::ideal_target;
  opt.seed = setup.seed;
  const LinearCodec codec = opt.codec;
  opt.target = [rig, setup, codec](const DenoiseRequest& req) {
    Camera cam = req.camera;
    cam.height = req.q.height;
    cam.width = req.q.width;
    const RenderSpace space = req.q.channels == 3 ? RenderSpace::rgb : RenderSpace::latent;
    return render_shell(rig, setup.shell, cam, space, codec, setup.target_rays);
  };
  opt.segmenter = [rig, setup](const SegmentRequest& req) {
    Camera cam = req.camera;
    cam.height = req.height > 0 ? req.height : req.image.height;
    cam.width = req.width > 0 ? req.width : req.image.width;
    if (req.keyword != setup.shell.keyword) return ScalarImage(cam.height, cam.width, 0.0);
    return shell_silhouette(rig, setup.shell, cam, setup.target_rays);
  };
  const Mesh mesh = skin_mesh(*rig.model, rig.params);
  auto source = std::make_shared<const TextureMap>(setup.paint_source);
  auto bvh = std::make_shared<const MeshBvh>(mesh);
  opt.generator = [mesh, bvh, source](const GenerateRequest& req) {
    return shade(rasterize_fragments(mesh, *bvh, req.camera), *source, TextureFilter::nearest);
  };
  const std::shared_ptr<const BodyModel> model = rig.model;
  const VecX beta = setup.landmark_beta.size() ? setup.landmark_beta : VecX::Zero(model->num_shape());
  opt.landmarker = [model, beta](const FeatureImage&) {
    AvatarParams p = AvatarParams::rest(*model);
    p.beta = beta;
    std::vector<int> ids;
    for (const auto& l : model->landmarks) ids.push_back(l.vertex);
    LandmarkSet set;
    set.points = skin_vertices(*model, p, ids);
    set.vertices = ids;
    set.confidence = VecX::Ones(static_cast<Eigen::Index>(ids.size()));
    return set;
  };
  return std::make_unique<SyntheticOracle>(std::move(opt));
}

double mask_iou(const ScalarImage& a, const std::vector<double>& b, double threshold) {
  if (a.size() != b.size()) throw ParameterError("mask_iou: sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.values[i] > threshold, y = b[i] > threshold;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace compav
