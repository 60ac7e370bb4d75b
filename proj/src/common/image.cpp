#include "compav/image.hpp"

#include <cmath>

namespace compav {

FeatureImage FeatureImage::flipped_horizontal() const {
  FeatureImage out(height, width, channels);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int src = width - 1 - c;
      for (int ch = 0; ch < channels; ++ch) out.at(r, c, ch) = at(r, src, ch);
      out.alpha[out.index(r, c)] = alpha[index(r, src)];
    }
  }
  return out;
}

bool FeatureImage::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  for (double v : alpha)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace compav
