#include "compav/camera.hpp"

#include <cmath>
#include <numbers>

namespace compav {

namespace {
double radians(double deg) { return deg * std::numbers::pi / 180.0; }
}  // namespace

Camera Camera::orbit(double azimuth_deg, double elevation_deg, double distance, int width, int height,
                     double fov_y_deg, const Vec3& target) {
  const double az = radians(azimuth_deg), el = radians(elevation_deg);
  Camera c;
  c.target = target;
  c.position = target + distance * Vec3(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
  c.width = width;
  c.height = height;
  c.fov_y_deg = fov_y_deg;
  return c;
}

Vec3 Camera::forward() const { return (target - position).normalized(); }
Vec3 Camera::right() const { return forward().cross(up).normalized(); }
Vec3 Camera::true_up() const { return right().cross(forward()); }

Ray Camera::pixel_ray(int row, int col) const {
  const double tan_half = std::tan(radians(fov_y_deg) / 2.0);
  const double aspect = static_cast<double>(width) / height;
  const double x = (2.0 * (col + 0.5) / width - 1.0) * tan_half * aspect;
  const double y = (1.0 - 2.0 * (row + 0.5) / height) * tan_half;
  const Vec3 f = forward(), r = right(), u = r.cross(f);
  return {position, (f + x * r + y * u).normalized()};
}

Vec2 Camera::project(const Vec3& world) const {
  const Vec3 f = forward(), r = right(), u = r.cross(f);
  const Vec3 d = world - position;
  const double depth = d.dot(f);
  const double tan_half = std::tan(radians(fov_y_deg) / 2.0);
  const double aspect = static_cast<double>(width) / height;
  const double x = d.dot(r) / depth / (tan_half * aspect);
  const double y = d.dot(u) / depth / tan_half;
  return {(x + 1.0) * width / 2.0, (1.0 - y) * height / 2.0};
}

}  // namespace compav
