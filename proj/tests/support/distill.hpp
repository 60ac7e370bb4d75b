#pragma once

// Supervised fit of an MlpField to an occupancy function, giving components
// with known shape without running guided training.

#include <functional>

#include "compav/adam.hpp"
#include "compav/mlp_field.hpp"
#include "compav/rng.hpp"

namespace compav::testing {

struct DistillOptions {
  FieldArchitecture arch{48, 2, 5, 1, 3, -1.0};
  double density = 30.0;
  int steps = 600;
  int batch = 384;
  double learning_rate = 1e-2;
  std::uint64_t seed = 1;
  double bounds = 1.0;  // background samples cover [−bounds, bounds]³
};

inline MlpField distill(const std::function<bool(const Vec3&)>& inside, const VecX& color, const Vec3& lo,
                        const Vec3& hi, const DistillOptions& o = {}) {
  MlpField field(o.arch, o.seed);
  Rng rng(o.seed + 100);
  AdamOptions ao;
  ao.learning_rate = o.learning_rate;
  Adam adam(static_cast<std::size_t>(field.parameter_count()), ao);
  Points x(o.batch, 3), d(o.batch, 3);
  for (int step = 0; step < o.steps; ++step) {
    std::vector<bool> in(static_cast<std::size_t>(o.batch));
    for (int i = 0; i < o.batch; ++i) {
      Vec3 p;
      // Thirds: whole volume, neighbourhood of the region, inside the region.
      const Vec3 mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
      if (i % 3 == 0) {
        for (int c = 0; c < 3; ++c) p[c] = rng.uniform(-o.bounds, o.bounds);
      } else if (i % 3 == 1) {
        for (int c = 0; c < 3; ++c) p[c] = mid[c] + 3.0 * half[c] * rng.uniform(-1.0, 1.0);
      } else {
        for (int tries = 0; tries < 200; ++tries) {
          for (int c = 0; c < 3; ++c) p[c] = rng.uniform(lo[c], hi[c]);
          if (inside(p)) break;
        }
      }
      x.row(i) = p.transpose();
      d.row(i) = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized().transpose();
      in[static_cast<std::size_t>(i)] = inside(p);
    }
    VecX sigma;
    MatX col;
    MlpField::Tape tape;
    field.forward(x, d, sigma, col, &tape);
    VecX ds(o.batch);
    MatX dc = MatX::Zero(o.batch, col.cols());
    for (int i = 0; i < o.batch; ++i) {
      const bool k = in[static_cast<std::size_t>(i)];
      ds[i] = 2.0 * (sigma[i] - (k ? o.density : 0.0)) / o.batch / (o.density * o.density);
      if (k) dc.row(i) = 2.0 * (col.row(i) - color.transpose()) / o.batch;
    }
    VecX g = VecX::Zero(field.parameter_count());
    field.backward(tape, ds, dc, g);
    adam.step({field.parameters().data(), static_cast<std::size_t>(g.size())}, {g.data(), static_cast<std::size_t>(g.size())});
  }
  field.round_to_float32();
  return field;
}

}  // namespace compav::testing
