#include "compav/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "compav/adam.hpp"
#include "compav/encoding.hpp"
#include "compav/errors.hpp"

namespace compav {

namespace fs = std::filesystem;
using nlohmann::json;

CameraSampling::Sample CameraSampling::sample(Rng& rng, int width, int height) const {
  Sample s;
  s.azimuth = rng.uniform(0.0, 360.0);
  s.elevation = rng.uniform(elevation_min, elevation_max);
  s.radius = distance * rng.uniform(1.0 - radius_jitter, 1.0 + radius_jitter);
  s.camera = Camera::orbit(s.azimuth, s.elevation, s.radius, width, height, fov);
  return s;
}

json TrainConfig::to_json() const {
  return {{"iterations", iterations},
          {"learning_rate", learning_rate},
          {"width", width},
          {"height", height},
          {"samples", rays.samples},
          {"near", rays.near},
          {"far", rays.far},
          {"jitter", rays.jitter},
          {"lambda_mask", weights.mask},
          {"lambda_sparse", weights.sparse},
          {"lambda_sim", weights.sim},
          {"segment_every", segment_every},
          {"camera", {{"distance", cameras.distance}, {"fov", cameras.fov}, {"elevation_min", cameras.elevation_min},
                      {"elevation_max", cameras.elevation_max}, {"radius_jitter", cameras.radius_jitter}}},
          {"anneal_fraction", anneal_fraction},
          {"anneal_floor", anneal_floor},
          {"architecture", {{"hidden", architecture.hidden}, {"layers", architecture.layers},
                            {"pos_bands", architecture.pos_bands}, {"dir_bands", architecture.dir_bands},
                            {"channels", architecture.channels}, {"density_bias", architecture.density_bias}}},
          {"frame", {{"neighbors", frame.neighbors}, {"tau", frame.tau}, {"cutoff", frame.cutoff}}},
          {"seed", seed},
          {"oracle_retries", oracle_retries},
          {"component_id", component_id}};
}

int annealed_t_max(const NoiseSchedule& schedule, int it, int iterations, double fraction, double floor) {
  const int lo = schedule.t_min, hi = schedule.t_max;
  if (iterations <= 0 || fraction <= 0.0) return hi;
  const double start = (1.0 - fraction) * iterations;
  if (it < start) return hi;
  const double s = std::clamp((it - start) / (fraction * iterations), 0.0, 1.0);
  const double top = hi - s * (1.0 - floor) * (hi - lo);
  return std::clamp(static_cast<int>(std::lround(top)), lo, hi);
}

void calibration_pairs(Oracle& oracle, int count, std::uint64_t seed, MatX& latents, MatX& rgb) {
  Rng rng(Rng::derive_seed(seed, "calibration"));
  FeatureImage img(1, count, 3);
  for (auto& v : img.data) v = rng.uniform();
  const FeatureImage z = oracle.encode(img);
  if (z.pixel_count() != static_cast<std::size_t>(count) || z.channels != 4)
    throw OracleError("encode returned an unexpected shape for calibration colors", false);
  latents.resize(count, 4);
  rgb.resize(count, 3);
  for (int i = 0; i < count; ++i) {
    for (int c = 0; c < 4; ++c) latents(i, c) = z.data[static_cast<std::size_t>(4 * i + c)];
    for (int c = 0; c < 3; ++c) rgb(i, c) = img.data[static_cast<std::size_t>(3 * i + c)];
  }
}

namespace {

bool finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct Loop {
  const char* stage;
  const AvatarRig& rig;
  const std::string& prompt;
  const std::string& keyword;
  Oracle& oracle;
  const TrainConfig& config;
  RenderSpace space;
  RadianceComponent component;
  std::vector<json> log;

  void checkpoint(int done, const json* diagnostics = nullptr) const {
    if (config.checkpoint_dir.empty()) return;
    fs::create_directories(config.checkpoint_dir);
    RadianceComponent snap = component;
    snap.field.round_to_float32();
    save_component(snap, config.checkpoint_dir / "component.rfc");
    json state = {{"stage", stage}, {"completed_iterations", done}, {"config", config.to_json()}};
    write_file_atomic(config.checkpoint_dir / "state.json", state.dump(2) + "\n");
    if (diagnostics) write_file_atomic(config.checkpoint_dir / "diagnostics.json", diagnostics->dump(2) + "\n");
  }

  template <class F>
  auto with_retries(int it, F&& f) -> decltype(f()) {
    for (int attempt = 0;; ++attempt) {
      try {
        return f();
      } catch (const OracleError& e) {
        if (e.retryable() && attempt < config.oracle_retries) continue;
        checkpoint(it);
        throw StageError(stage, it, std::string("oracle failure after ") + std::to_string(attempt + 1) +
                                        " attempt(s): " + e.what(),
                         "iteration");
      }
    }
  }

  [[noreturn]] void numeric_failure(int it, const std::string& what, const CameraSampling::Sample& cam, int t) {
    json diag = {{"iteration", it},
                 {"what", what},
                 {"timestep", t},
                 {"camera", {{"azimuth", cam.azimuth}, {"elevation", cam.elevation}, {"radius", cam.radius}}}};
    checkpoint(it, &diag);
    throw NumericError(std::string(stage) + " iteration " + std::to_string(it) + ": non-finite " + what);
  }

  void run() {
    const TrainConfig& cfg = config;
    if (cfg.iterations < 0) throw ConfigError("iterations must be >= 0");
    if (cfg.segment_every < 1) throw ConfigError("segment_every must be >= 1");
    if (!rig.model) throw ParameterError("training needs a rig with a model");

    std::ofstream log_file;
    if (!cfg.log_path.empty()) {
      if (cfg.log_path.has_parent_path()) fs::create_directories(cfg.log_path.parent_path());
      log_file.open(cfg.log_path, std::ios::trunc);
    }
    if (cfg.iterations == 0) return;

    const OracleHealth health = with_retries(0, [&] { return oracle.health(); });
    const std::vector<std::string> skip{component.id};
    AvatarRig background_rig = rig;
    for (const auto& a : rig.components)
      if (a.component.id != component.id &&
          (a.component.frame.neighbors != component.frame.neighbors || a.component.frame.tau != component.frame.tau ||
           a.component.frame.cutoff != component.frame.cutoff))
        throw ConfigError("attached component '" + a.component.id + "' uses different canonical frame constants");
    const PosedBody body(*rig.model, rig.params, component.frame);

    AvatarRenderOptions ropt;
    ropt.space = space;
    ropt.rays = cfg.rays;
    ropt.latent_downsample = health.latent_downsample;

    MlpField& field = component.field;
    AdamOptions aopt;
    aopt.learning_rate = cfg.learning_rate;
    Adam adam(static_cast<std::size_t>(field.parameter_count()), aopt);
    Rng rng(Rng::derive_seed(cfg.seed, stage));
    Eigen::VectorXd z_text;
    if (space == RenderSpace::rgb && cfg.weights.sim > 0.0)
      z_text = with_retries(0, [&] { return oracle.embed_text(prompt); });

    for (int it = 0; it < cfg.iterations; ++it) {
      const CameraSampling::Sample cam = cfg.cameras.sample(rng, cfg.width, cfg.height);
      const Camera& camera = cam.camera;
      const BaseLayer base = with_retries(it, [&] { return base_layer(background_rig, body, camera, ropt, &oracle); });
      const AvatarRender below = composite_components(background_rig, body, camera, base, ropt, skip);

      RenderOptions ro = cfg.rays;
      ro.seed = Rng::derive_seed(cfg.seed, static_cast<std::uint64_t>(it));
      RenderTape tape;
      const FeatureImage render = render_image(field, camera, &body, {&base.fragments, &below.image}, ro, &tape);
      if (!render.all_finite() || !finite(render.alpha)) numeric_failure(it, "render", cam, -1);

      const int t_hi = annealed_t_max(health.schedule, it, cfg.iterations, cfg.anneal_fraction, cfg.anneal_floor);
      const Rng replay = rng;
      const SdsResult sds = with_retries(it, [&] {
        rng = replay;
        return sds_gradient(render, prompt, oracle, health.schedule, health.schedule.t_min, t_hi, rng, camera);
      });
      if (!sds.gradient.all_finite()) numeric_failure(it, "guidance gradient", cam, sds.t);

      FeatureImage grad = sds.gradient;
      double sds_energy = 0.0;
      for (double g : grad.data) sds_energy += g * g;
      sds_energy /= static_cast<double>(std::max<std::size_t>(grad.data.size(), 1));

      json losses = {{"sds", sds_energy}};
      double total = 0.0;
      if (it % cfg.segment_every == 0 && cfg.weights.mask > 0.0) {
        const ScalarImage omega = with_retries(it, [&] {
          SegmentRequest req;
          req.image = space == RenderSpace::latent ? oracle.decode(render) : render;
          req.keyword = keyword;
          req.height = cfg.height;
          req.width = cfg.width;
          req.camera = camera;
          return oracle.segment(req);
        });
        const double lm = mask_loss(omega.values, render.alpha);
        mask_loss_grad(omega.values, render.alpha, cfg.weights.mask, grad.alpha);
        losses["mask"] = lm;
        total += cfg.weights.mask * lm;
      } else {
        losses["mask"] = nullptr;
      }
      const double ls = sparsity_loss(render.alpha);
      if (cfg.weights.sparse > 0.0) sparsity_loss_grad(render.alpha, cfg.weights.sparse, grad.alpha);
      losses["sparse"] = ls;
      total += cfg.weights.sparse * ls;

      if (space == RenderSpace::rgb && cfg.weights.sim > 0.0) {
        const Eigen::VectorXd z_img = with_retries(it, [&] { return oracle.embed_image(render); });
        const double lsim = similarity_loss(z_img, z_text);
        const Eigen::VectorXd cot = similarity_loss_grad(z_img, z_text);
        const FeatureImage vjp = with_retries(it, [&] { return oracle.embed_image_vjp(render, cot); });
        if (!vjp.same_shape(render)) throw OracleError("embed_image_vjp returned the wrong shape", false);
        for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += cfg.weights.sim * vjp.data[i];
        losses["sim"] = lsim;
        total += cfg.weights.sim * lsim;
      }
      losses["total"] = total;
      if (!std::isfinite(total)) numeric_failure(it, "loss", cam, sds.t);

      VecX g = VecX::Zero(field.parameter_count());
      render_backward(field, tape, grad, g);
      if (!g.allFinite()) numeric_failure(it, "parameter gradient", cam, sds.t);
      adam.step({field.parameters().data(), static_cast<std::size_t>(field.parameters().size())},
                {g.data(), static_cast<std::size_t>(g.size())});

      json entry = {{"iter", it},
                    {"losses", losses},
                    {"timestep", sds.t},
                    {"camera", {{"azimuth", cam.azimuth}, {"elevation", cam.elevation}, {"radius", cam.radius}}}};
      if (log_file) log_file << entry.dump() << "\n" << std::flush;
      log.push_back(std::move(entry));
      if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) checkpoint(it + 1);
    }
    field.round_to_float32();
    checkpoint(cfg.iterations);
  }
};

}  // namespace

TrainResult train_component(const AvatarRig& rig, const std::string& prompt, const std::string& keyword,
                            Oracle& oracle, const TrainConfig& config) {
  if (config.architecture.channels != 4) throw ConfigError("latent training needs a 4-channel field");
  RadianceComponent comp;
  comp.id = config.component_id;
  comp.field = MlpField(config.architecture, Rng::derive_seed(config.seed, "field"));
  comp.field.round_to_float32();
  comp.frame = config.frame;
  comp.prompt = prompt;
  comp.keyword = keyword;
  comp.provenance = {{"stage", "learn"}, {"seed", config.seed}, {"iterations", config.iterations}};
  Loop loop{"learn", rig, prompt, keyword, oracle, config, RenderSpace::latent, std::move(comp), {}};
  loop.run();
  return {std::move(loop.component), std::move(loop.log)};
}

TrainResult refine_component(const RadianceComponent& component, const AvatarRig& rig, const std::string& prompt,
                             Oracle& oracle, const RefineConfig& config) {
  if (component.field.channels() != 4 || component.field.has_adapter())
    throw ConfigError("refinement expects a trained latent component");
  if (config.calibration_latents.rows() == 0 || config.calibration_rgb.rows() == 0)
    throw ConfigError("refinement needs latent/RGB calibration pairs");
  if (config.calibration_latents.rows() != config.calibration_rgb.rows() || config.calibration_latents.cols() != 4 ||
      config.calibration_rgb.cols() != 3)
    throw ConfigError("calibration pairs must be N x 4 latents and N x 3 colors");
  RadianceComponent comp = component;
  comp.field.attach_adapter(fit_rgb_adapter(config.calibration_latents, config.calibration_rgb));
  if (!prompt.empty()) comp.prompt = prompt;
  comp.provenance["refine"] = {{"seed", config.seed}, {"iterations", config.iterations}};
  Loop loop{"refine", rig, comp.prompt, comp.keyword, oracle, config, RenderSpace::rgb, std::move(comp), {}};
  loop.run();
  return {std::move(loop.component), std::move(loop.log)};
}

}  // namespace compav
