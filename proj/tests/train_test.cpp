#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "compav/errors.hpp"
#include "compav/procedural.hpp"
#include "compav/toy_model.hpp"
#include "compav/train.hpp"

using namespace compav;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::shared_ptr<const BodyModel> toy() {
  static const auto model = std::make_shared<const BodyModel>(make_toy_model());
  return model;
}

AvatarRig rig() {
  auto m = toy();
  return make_rig(m, VecX::Zero(m->num_shape()), procedural_texture(32, 32));
}

TrainConfig small_config(int iterations) {
  TrainConfig c;
  c.iterations = iterations;
  c.width = 12;
  c.height = 12;
  c.rays = {12, -1.0, 1.0, true, 0};
  c.architecture = {16, 2, 2, 1, 4, -1.0};
  c.learning_rate = 1e-2;
  c.seed = 3;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("compav_train_" + name);
  fs::remove_all(p);
  return p;
}

bool bit_equal(const VecX& a, const VecX& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

// Denoiser that starts failing after a number of successful calls.
class FlakyOracle : public SyntheticOracle {
 public:
  FlakyOracle(int ok, int failures, bool retryable) : ok_(ok), failures_(failures), retryable_(retryable) {
    options().critic = Critic::linear;
  }
  DenoiseResponse denoise(const DenoiseRequest& r) override {
    ++attempts;
    if (attempts > ok_ && (failures_ < 0 || attempts <= ok_ + failures_))
      throw OracleError("critic unavailable", retryable_);
    return SyntheticOracle::denoise(r);
  }
  int attempts = 0;

 private:
  int ok_, failures_;
  bool retryable_;
};

// Image and text embeddings always coincide.
class AgreeingOracle : public SyntheticOracle {
 public:
  AgreeingOracle() { options().critic = Critic::linear; }
  Eigen::VectorXd embed_image(const FeatureImage&) override { return VecX::LinSpaced(16, -1, 2); }
  Eigen::VectorXd embed_text(const std::string&) override { return VecX::LinSpaced(16, -1, 2); }
};

double mean_alpha(const RadianceComponent& comp, const AvatarRig& r) {
  const AvatarRig with = attach(r, comp);
  AvatarRenderOptions o;
  o.rays = {32, -1.0, 1.0, false, 0};
  SyntheticOracle enc;
  double s = 0.0;
  int n = 0;
  for (double az : {0.0, 90.0, 180.0, 270.0}) {
    const AvatarRender img = render_avatar(with, Camera::orbit(az, 10, 2.5, 16, 16), o, &enc);
    for (double a : img.components.at(comp.id).alpha) s += a, ++n;
  }
  return s / n;
}

}  // namespace

TEST_CASE("timestep annealing") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear();
  CHECK(annealed_t_max(s, 0, 100, 0.2, 0.5) == s.t_max);
  CHECK(annealed_t_max(s, 79, 100, 0.2, 0.5) == s.t_max);
  CHECK(annealed_t_max(s, 90, 100, 0.2, 0.5) == 740);
  CHECK(annealed_t_max(s, 100, 100, 0.2, 0.5) == 500);
  CHECK(annealed_t_max(s, 50, 100, 0.0, 0.5) == s.t_max);
}

TEST_CASE("zero iterations return the initial field") {
  SyntheticOracle oracle;
  TrainConfig cfg = small_config(0);
  const TrainResult r = train_component(rig(), "a hat", "hat", oracle, cfg);
  MlpField init(cfg.architecture, Rng::derive_seed(cfg.seed, "field"));
  init.round_to_float32();
  CHECK(bit_equal(r.component.field.parameters(), init.parameters()));
  CHECK(r.log.empty());
  CHECK(oracle.calls("denoise") == 0);
  CHECK(r.component.prompt == "a hat");
  CHECK(r.component.keyword == "hat");
}

TEST_CASE("training is deterministic and logs every iteration") {
  SyntheticOracle a, b;
  a.options().critic = b.options().critic = SyntheticOracle::Critic::linear;
  TrainConfig cfg = small_config(6);
  cfg.segment_every = 3;
  const fs::path log = scratch("log") / "learn.jsonl";
  cfg.log_path = log;
  const TrainResult x = train_component(rig(), "a hat", "hat", a, cfg);
  cfg.log_path.clear();
  const TrainResult y = train_component(rig(), "a hat", "hat", b, cfg);
  CHECK(bit_equal(x.component.field.parameters(), y.component.field.parameters()));
  CHECK(x.component.field.parameters().cast<float>().cast<double>() == x.component.field.parameters());

  std::ifstream in(log);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const json e = json::parse(line);
    CHECK(e == x.log[static_cast<std::size_t>(n)]);
    CHECK(e["iter"] == n);
    CHECK(e["losses"]["sds"].get<double>() >= 0.0);
    CHECK(e["losses"]["mask"].is_null() == (n % 3 != 0));
    CHECK(e["losses"].contains("sparse"));
    CHECK_FALSE(e["losses"].contains("sim"));
    const double total = cfg.weights.sparse * e["losses"]["sparse"].get<double>() +
                         (e["losses"]["mask"].is_null() ? 0.0 : cfg.weights.mask * e["losses"]["mask"].get<double>());
    CHECK(e["losses"]["total"].get<double>() == doctest::Approx(total).epsilon(1e-12));
    const int t = e["timestep"];
    CHECK(t >= 20);
    CHECK(t <= 980);
    CHECK(e["camera"]["elevation"].get<double>() >= -10.0);
    CHECK(e["camera"]["elevation"].get<double>() <= 30.0);
    CHECK(e["camera"]["radius"].get<double>() >= 2.25);
    CHECK(e["camera"]["radius"].get<double>() <= 2.75);
    ++n;
  }
  CHECK(n == 6);
  CHECK(a.calls("segment") == 2);
}

TEST_CASE("strong mask loss against an empty segmentation removes the component") {
  SyntheticOracle oracle;  // perfect critic, empty masks
  TrainConfig cfg = small_config(120);
  cfg.weights.mask = 100.0;
  cfg.segment_every = 1;
  cfg.architecture.density_bias = 0.5;
  const TrainResult r = train_component(rig(), "a hat", "hat", oracle, cfg);
  RadianceComponent init = r.component;
  init.field = MlpField(cfg.architecture, Rng::derive_seed(cfg.seed, "field"));
  CHECK(mean_alpha(init, rig()) > 0.2);
  CHECK(mean_alpha(r.component, rig()) < 0.01);
}

TEST_CASE("non-finite guidance aborts with diagnostics") {
  SyntheticOracle oracle;
  oracle.options().critic = SyntheticOracle::Critic::ideal_target;
  oracle.options().target = [](const DenoiseRequest& r) {
    FeatureImage t = r.q;
    t.data[0] = std::nan("");
    return t;
  };
  TrainConfig cfg = small_config(4);
  cfg.checkpoint_dir = scratch("nan");
  CHECK_THROWS_WITH_AS(train_component(rig(), "p", "k", oracle, cfg),
                       doctest::Contains("learn iteration 0: non-finite"), NumericError);
  REQUIRE(fs::exists(cfg.checkpoint_dir / "diagnostics.json"));
  std::ifstream in(cfg.checkpoint_dir / "diagnostics.json");
  const json d = json::parse(in);
  CHECK(d["iteration"] == 0);
  CHECK(d.contains("camera"));
  CHECK(fs::exists(cfg.checkpoint_dir / "component.rfc"));
}

TEST_CASE("transient oracle failures are retried") {
  FlakyOracle oracle(2, 2, true);
  TrainConfig cfg = small_config(4);
  cfg.oracle_retries = 2;
  const TrainResult r = train_component(rig(), "p", "k", oracle, cfg);
  CHECK(r.log.size() == 4);
  CHECK(oracle.attempts == 6);

  FlakyOracle control(100, 0, true);
  const TrainResult c = train_component(rig(), "p", "k", control, cfg);
  CHECK(bit_equal(r.component.field.parameters(), c.component.field.parameters()));
}

TEST_CASE("persistent oracle failure stops the stage with a checkpoint") {
  FlakyOracle oracle(3, -1, true);
  TrainConfig cfg = small_config(6);
  cfg.oracle_retries = 2;
  cfg.checkpoint_dir = scratch("fail");
  try {
    train_component(rig(), "p", "k", oracle, cfg);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "learn");
    CHECK(e.step() == 3);
    CHECK(std::string(e.what()).find("learn iteration 3") != std::string::npos);
    CHECK(std::string(e.what()).find("critic unavailable") != std::string::npos);
  }
  CHECK(oracle.attempts == 6);
  std::ifstream in(cfg.checkpoint_dir / "state.json");
  CHECK(json::parse(in)["completed_iterations"] == 3);
  CHECK(load_component(cfg.checkpoint_dir / "component.rfc").field.parameter_count() > 0);

  FlakyOracle fatal(1, -1, false);
  CHECK_THROWS_AS(train_component(rig(), "p", "k", fatal, cfg), StageError);
  CHECK(fatal.attempts == 2);
}

TEST_CASE("refinement preconditions") {
  SyntheticOracle oracle;
  TrainConfig base = small_config(0);
  const RadianceComponent comp = train_component(rig(), "p", "k", oracle, base).component;
  RefineConfig cfg;
  static_cast<TrainConfig&>(cfg) = small_config(1);
  CHECK_THROWS_AS(refine_component(comp, rig(), "p", oracle, cfg), ConfigError);
  cfg.calibration_latents = MatX::Random(5, 4);
  cfg.calibration_rgb = MatX::Random(4, 3);
  CHECK_THROWS_AS(refine_component(comp, rig(), "p", oracle, cfg), ConfigError);
  RadianceComponent rgb = comp;
  rgb.field.attach_adapter(RgbAdapter{});
  calibration_pairs(oracle, 32, 1, cfg.calibration_latents, cfg.calibration_rgb);
  CHECK_THROWS_AS(refine_component(rgb, rig(), "p", oracle, cfg), ConfigError);
}

TEST_CASE("refinement fits the adapter from calibration pairs") {
  Rng rng(12);
  Eigen::Matrix<double, 3, 4> A;
  for (int i = 0; i < 12; ++i) A(i / 4, i % 4) = rng.uniform(-1, 1);
  const Vec3 b(0.1, -0.2, 0.3);
  auto pairs = [&](int n, MatX& z, MatX& c) {
    z.resize(n, 4);
    for (int i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform(-1, 1);
    c = (z * A.transpose()).rowwise() + b.transpose();
  };
  SyntheticOracle oracle;
  const RadianceComponent comp = train_component(rig(), "p", "k", oracle, small_config(0)).component;
  RefineConfig cfg;
  static_cast<TrainConfig&>(cfg) = small_config(0);
  pairs(64, cfg.calibration_latents, cfg.calibration_rgb);
  const RadianceComponent out = refine_component(comp, rig(), "p", oracle, cfg).component;
  REQUIRE(out.field.has_adapter());
  MatX zh, ch;
  pairs(50, zh, ch);
  const RgbAdapter ad = out.field.adapter();
  const MatX pred = (zh * ad.weight.transpose()).rowwise() + ad.bias.transpose();
  CHECK((pred - ch).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(out.field.channels() == 3);
}

TEST_CASE("refinement with zero weights and a perfect critic only adds the adapter") {
  SyntheticOracle oracle;
  TrainConfig base = small_config(3);
  base.seed = 8;
  const RadianceComponent comp = train_component(rig(), "p", "k", oracle, base).component;
  RefineConfig cfg;
  static_cast<TrainConfig&>(cfg) = small_config(5);
  cfg.weights = {0.0, 0.0, 0.0, 0.0};
  calibration_pairs(oracle, 64, 2, cfg.calibration_latents, cfg.calibration_rgb);
  const RadianceComponent out = refine_component(comp, rig(), "p", oracle, cfg).component;
  RadianceComponent expect = comp;
  expect.field.attach_adapter(fit_rgb_adapter(cfg.calibration_latents, cfg.calibration_rgb));
  expect.field.round_to_float32();
  CHECK(bit_equal(out.field.parameters(), expect.field.parameters()));
}

TEST_CASE("similarity term vanishes when embeddings agree") {
  AgreeingOracle a, b;
  const RadianceComponent comp = train_component(rig(), "p", "k", a, small_config(0)).component;
  RefineConfig cfg;
  static_cast<TrainConfig&>(cfg) = small_config(4);
  cfg.segment_every = 2;
  calibration_pairs(a, 64, 2, cfg.calibration_latents, cfg.calibration_rgb);
  const TrainResult with = refine_component(comp, rig(), "p", a, cfg);
  RefineConfig off = cfg;
  off.weights.sim = 0.0;
  const TrainResult without = refine_component(comp, rig(), "p", b, off);
  const VecX& p = with.component.field.parameters();
  const VecX& q = without.component.field.parameters();
  CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
  for (const json& e : with.log) {
    REQUIRE(e["losses"].contains("sim"));
    CHECK(e["losses"]["sim"].get<double>() == doctest::Approx(-1.0).epsilon(1e-12));
    const double mask = e["losses"]["mask"].is_null() ? 0.0 : e["losses"]["mask"].get<double>();
    const double total = cfg.weights.mask * mask + cfg.weights.sparse * e["losses"]["sparse"].get<double>() +
                         cfg.weights.sim * e["losses"]["sim"].get<double>();
    CHECK(e["losses"]["total"].get<double>() == doctest::Approx(total).epsilon(1e-12));
  }
  CHECK(a.calls("embed_image_vjp") == 4);
}
