#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace compav {

// H×W×C grid of features (C=4 latent or C=3 color) plus a per-pixel alpha /
// coverage channel. Row 0 is the top of the image.
struct FeatureImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;   // row-major, channel-interleaved
  std::vector<double> alpha;  // row-major, one value per pixel

  FeatureImage() = default;
  FeatureImage(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill),
        alpha(static_cast<std::size_t>(h) * w, 0.0) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }

  double& at(int row, int col, int ch) { return data[index(row, col) * channels + ch]; }
  double at(int row, int col, int ch) const { return data[index(row, col) * channels + ch]; }

  std::span<double> pixel(std::size_t p) { return {data.data() + p * channels, static_cast<std::size_t>(channels)}; }
  std::span<const double> pixel(std::size_t p) const {
    return {data.data() + p * channels, static_cast<std::size_t>(channels)};
  }

  bool same_shape(const FeatureImage& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  FeatureImage flipped_horizontal() const;
  bool all_finite() const;
};

// Single-channel image (masks, depth).
struct ScalarImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  ScalarImage() = default;
  ScalarImage(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  std::size_t size() const { return values.size(); }
  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

}  // namespace compav
