#pragma once

#include <cstdint>

#include "compav/body_model.hpp"

namespace compav {

// Desk-scale stand-in for a licensed body model: a rounded cylinder "head"
// spanning y ∈ [−0.6, 0.6], joints stacked along +y, smooth synthetic bases.
// The mesh and UV layout are mirror-symmetric about x = 0 (u ↦ 1 − u).
struct ToyModelOptions {
  int joints = 3;       // 1..4
  int rings = 16;
  int segments = 24;    // must be even for mirror symmetry
  int shape = 16;
  int expression = 4;
  int landmarks = 68;
  bool pose_correctives = true;
  // Non-root canonical pose angle (radians, about z) for joint 1.
  double canonical_bend = 0.1;
  std::uint64_t seed = 7;
};

BodyModel make_toy_model(const ToyModelOptions& options = {});

}  // namespace compav
