#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "compav/errors.hpp"
#include "compav/landmark_fit.hpp"
#include "compav/toy_model.hpp"
#include "support/models.hpp"
#include "support/naive_lbs.hpp"

using namespace compav;

namespace {

LandmarkSet landmarks_from(const BodyModel& m, const Points& posed) {
  LandmarkSet l;
  for (const auto& c : m.landmarks) l.vertices.push_back(c.vertex);
  l.points.resize(l.size(), 3);
  for (int i = 0; i < l.size(); ++i) l.points.row(i) = posed.row(l.vertices[i]);
  l.confidence = VecX::Ones(l.size());
  return l;
}

VecX ground_truth_beta(const BodyModel& m, std::uint64_t seed) {
  Rng rng(seed);
  VecX beta = VecX::Zero(m.num_shape());
  for (int i = 0; i < 10; ++i) beta[i] = rng.uniform(-0.8, 0.8);
  return beta;
}

double mean_landmark_error(const BodyModel& m, const AvatarParams& p, const LandmarkSet& l) {
  const Points v = skin_vertices(m, p, l.vertices);
  return (v - l.points).rowwise().norm().mean();
}

}  // namespace

TEST_CASE("fit_residual") {
  const BodyModel m = make_toy_model();
  const AvatarParams rest = AvatarParams::rest(m);
  LandmarkSet l = landmarks_from(m, m.template_vertices);
  SUBCASE("exact landmarks at rest give zero loss") { CHECK(fit_residual(m, rest, l) == 0.0); }
  SUBCASE("one landmark offset by a unit x step") {
    l.points(5, 0) += 1.0;
    CHECK(fit_residual(m, rest, l) == doctest::Approx(1.0).epsilon(1e-7));
  }
  SUBCASE("matches a per-landmark loop") {
    Rng rng(4);
    const AvatarParams p = compav::testing::random_params(m, rng, 0.2);
    for (int i = 0; i < l.size(); ++i) l.confidence[i] = rng.uniform();
    FitConfig cfg;
    const auto ref = compav::testing::naive_lbs(m, p);
    double expected = 0.0;
    for (int i = 0; i < l.size(); ++i)
      for (int c = 0; c < 3; ++c) expected += l.confidence[i] * std::abs(ref.vertices(l.vertices[i], c) - l.points(i, c));
    expected += cfg.reg_weight_shape * p.beta.squaredNorm() + cfg.reg_weight_expr * p.psi.squaredNorm();
    CHECK(fit_residual(m, p, l, cfg) == doctest::Approx(expected).epsilon(1e-7));
  }
  SUBCASE("non-negative") {
    Rng rng(6);
    for (int t = 0; t < 20; ++t) CHECK(fit_residual(m, compav::testing::random_params(m, rng), l) >= 0.0);
  }
  SUBCASE("gradient matches central differences away from kinks") {
    Rng rng(9);
    const AvatarParams p = compav::testing::random_params(m, rng, 0.3);
    FitConfig cfg;
    cfg.reg_weight_shape = 0.3;
    cfg.reg_weight_expr = 0.2;
    const auto rg = fit_residual_gradient(m, p, l, cfg);
    CHECK(rg.loss == doctest::Approx(fit_residual(m, p, l, cfg)).epsilon(1e-12));
    auto probe = [&](VecX AvatarParams::*field, const VecX& analytic) {
      for (int i = 0; i < analytic.size(); ++i) {
        AvatarParams a = p, b = p;
        const double h = 1e-6;
        (a.*field)[i] += h;
        (b.*field)[i] -= h;
        const double fd = (fit_residual(m, a, l, cfg) - fit_residual(m, b, l, cfg)) / (2 * h);
        CHECK(std::abs(fd - analytic[i]) <= 1e-4 * std::max(std::abs(fd), 1e-3));
      }
    };
    probe(&AvatarParams::beta, rg.grad.beta);
    probe(&AvatarParams::theta, rg.grad.theta);
    probe(&AvatarParams::psi, rg.grad.psi);
  }
}

TEST_CASE("fit_shape") {
  const BodyModel m = make_toy_model();
  AvatarParams gt = AvatarParams::rest(m);
  gt.beta = ground_truth_beta(m, 1);
  const LandmarkSet target = landmarks_from(m, compav::testing::naive_lbs(m, gt).vertices);

  SUBCASE("recovers a synthesized shape") {
    const auto t0 = std::chrono::steady_clock::now();
    const FitResult r = fit_shape(m, target);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("fit iterations " << r.iterations << " in " << secs << " s, loss " << r.loss);
    CHECK(mean_landmark_error(m, r.params, target) < 1e-3);
    CHECK(r.params.theta == m.canonical_pose);
    CHECK(r.params.psi.isZero(0.0));
  }
  SUBCASE("rest landmarks give near-zero beta") {
    const FitResult r = fit_shape(m, landmarks_from(m, m.template_vertices));
    CHECK(r.params.beta.cwiseAbs().maxCoeff() < 1e-2);
  }
  SUBCASE("stronger regularization shrinks beta") {
    // With exact landmarks the L1 term is an exact penalty: at the default
    // weight both optima sit on β_gt. Start from a weight where the
    // regularizer is active.
    FitConfig base;
    base.reg_weight_shape = base.reg_weight_expr = 5e-3;
    FitConfig strong = base;
    strong.reg_weight_shape *= 100;
    strong.reg_weight_expr *= 100;
    const double n_base = fit_shape(m, target, base).params.beta.norm();
    const double n_strong = fit_shape(m, target, strong).params.beta.norm();
    MESSAGE("beta norms " << n_base << " vs " << n_strong);
    CHECK(n_strong < n_base);
  }
  SUBCASE("doubling the weight never increases the parameter norm") {
    for (std::uint64_t seed : {2, 3, 4}) {
      AvatarParams p = AvatarParams::rest(m);
      p.beta = ground_truth_beta(m, seed);
      const LandmarkSet l = landmarks_from(m, compav::testing::naive_lbs(m, p).vertices);
      double previous = 1e300;
      for (double w : {0.02, 0.04, 0.08}) {
        FitConfig cfg;
        cfg.reg_weight_shape = cfg.reg_weight_expr = w;
        const double n = fit_shape(m, l, cfg).params.beta.norm();
        CHECK(n <= previous + 1e-3);
        previous = n;
      }
    }
  }
  SUBCASE("collinear landmarks are rejected") {
    LandmarkSet l = target;
    for (int i = 0; i < l.size(); ++i) l.points.row(i) << 0.1 * i, 0.2 * i, 0.0;
    CHECK_THROWS_AS(fit_shape(m, l), FitError);
  }
  SUBCASE("too few landmarks") {
    LandmarkSet l;
    l.vertices = {0, 1, 2};
    l.points = Points::Random(3, 3);
    l.confidence = VecX::Ones(3);
    CHECK_THROWS_AS(fit_shape(m, l), FitError);
  }
  SUBCASE("iteration cap flags an unconverged result") {
    FitConfig cfg;
    cfg.max_iters = 5;
    const FitResult r = fit_shape(m, target, cfg);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 5);
  }
}

TEST_CASE("landmark file round trip") {
  const BodyModel m = make_toy_model();
  LandmarkSet l = landmarks_from(m, m.template_vertices);
  l.confidence[3] = 0.25;
  const auto path = std::filesystem::temp_directory_path() / "compav_landmarks.json";
  save_landmarks(l, m, path);
  const LandmarkSet back = load_landmarks(path, m);
  CHECK(back.vertices == l.vertices);
  CHECK(back.points == l.points);
  CHECK(back.confidence == l.confidence);
}
