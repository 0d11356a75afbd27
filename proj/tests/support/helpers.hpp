#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <vector>

#include "garsdc/detection.hpp"
#include "garsdc/image.hpp"
#include "garsdc/oracle.hpp"
#include "garsdc/rng.hpp"

namespace garsdc::testing {

/// Probability vector of length `classes` whose argmax is `cls` with mass `top`.
inline std::vector<double> peaked(int classes, int cls, double top) {
  std::vector<double> p(static_cast<std::size_t>(classes), (1.0 - top) / (classes - 1));
  p[static_cast<std::size_t>(cls)] = top;
  return p;
}

inline std::vector<double> random_probs(Rng& rng, int classes) {
  std::vector<double> p(static_cast<std::size_t>(classes));
  double sum = 0.0;
  for (double& v : p) sum += (v = rng.uniform01() + 1e-3);
  for (double& v : p) v /= sum;
  return p;
}

inline BoundingBox random_box(Rng& rng, double extent, double min_side = 1.0) {
  const double x1 = rng.uniform01() * (extent - min_side);
  const double y1 = rng.uniform01() * (extent - min_side);
  const double x2 = x1 + min_side + rng.uniform01() * (extent - x1 - min_side);
  const double y2 = y1 + min_side + rng.uniform01() * (extent - y1 - min_side);
  return {x1, y1, x2, y2};
}

/// Image with bright uniform rectangles on black.
inline ImageTensor image_with_rects(int w, int h, const std::vector<BoundingBox>& rects, double level = 0.8) {
  ImageTensor img(w, h, 3, 0.0);
  for (const auto& r : rects) {
    for (int y = static_cast<int>(r.y1); y < static_cast<int>(r.y2); ++y) {
      for (int x = static_cast<int>(r.x1); x < static_cast<int>(r.x2); ++x) {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = level;
      }
    }
  }
  return img;
}

/// Wraps a detector and records every image it is asked about.
class RecordingDetector final : public Detector {
 public:
  explicit RecordingDetector(const Detector& inner) : inner_(&inner) {}

  std::vector<Detection> detect(const ImageTensor& image) const override {
    auto dets = inner_->detect(image);
    std::lock_guard lock(mutex_);
    if (on_query) on_query(image, dets);
    ++calls_;
    return dets;
  }
  int class_count() const override { return inner_->class_count(); }
  std::size_t calls() const { return calls_; }

  std::function<void(const ImageTensor&, const std::vector<Detection>&)> on_query;

 private:
  const Detector* inner_;
  mutable std::mutex mutex_;
  mutable std::size_t calls_ = 0;
};

/// Returns a fixed detection list for every image.
class FixedDetector final : public Detector {
 public:
  FixedDetector(std::vector<Detection> dets, int classes) : dets_(std::move(dets)), classes_(classes) {}
  std::vector<Detection> detect(const ImageTensor&) const override { return dets_; }
  int class_count() const override { return classes_; }

 private:
  std::vector<Detection> dets_;
  int classes_;
};

/// Fails every query.
class BrokenDetector final : public Detector {
 public:
  std::vector<Detection> detect(const ImageTensor&) const override { throw OracleUnavailable("bridge went away"); }
  int class_count() const override { return 2; }
};

}  // namespace garsdc::testing
