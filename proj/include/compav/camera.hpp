#pragma once

#include "compav/types.hpp"

namespace compav {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

// Pinhole camera looking at `target`. Rays are parameterized around the
// target for volume sampling (see RaySamples), so the target is also the
// scene centre.
struct Camera {
  Vec3 position{0.0, 0.0, 2.5};
  Vec3 target{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  double fov_y_deg = 40.0;
  int width = 64;
  int height = 64;

  // Orbit around `target`: azimuth 0 looks from +z, positive azimuth moves
  // toward +x; elevation positive moves toward +y.
  static Camera orbit(double azimuth_deg, double elevation_deg, double distance, int width, int height,
                      double fov_y_deg = 40.0, const Vec3& target = Vec3::Zero());

  Vec3 forward() const;
  Vec3 right() const;
  Vec3 true_up() const;

  // Ray through the centre of pixel (row, col); row 0 is the top.
  Ray pixel_ray(int row, int col) const;
  // Continuous pixel coordinates (x = col + 0.5 at a pixel centre, y = row + 0.5).
  Vec2 project(const Vec3& world) const;
  double distance_to_target() const { return (target - position).norm(); }
};

}  // namespace compav
