#pragma once

#include "garsdc/detection.hpp"

namespace garsdc {

/// Rectangular pixel region covering every channel. Sampled patches are
/// squares (width == height == a); quadrants of odd patches are not.
/// r is the column offset, s the row offset.
struct PatchIndex {
  int r = 0;
  int s = 0;
  int width = 1;
  int height = 1;

  static PatchIndex square(int r, int s, int a) { return {r, s, a, a}; }

  int side() const { return width; }
  long pixel_count() const { return static_cast<long>(width) * height; }
  bool contains(int x, int y) const { return x >= r && x < r + width && y >= s && y < s + height; }
  bool inside(int image_width, int image_height) const {
    return r >= 0 && s >= 0 && width >= 1 && height >= 1 && r + width <= image_width && s + height <= image_height;
  }
  BoundingBox as_box() const {
    return {static_cast<double>(r), static_cast<double>(s), static_cast<double>(r + width),
            static_cast<double>(s + height)};
  }

  friend bool operator==(const PatchIndex&, const PatchIndex&) = default;
};

}  // namespace garsdc
