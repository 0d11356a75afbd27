#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "garsdc/oracle.hpp"

namespace garsdc {

/// How box features are mapped to class logits.
///  - linear: z = gain * (P f + b)
///  - chain:  z = gain * M tanh(P f + b)                 (strictly layered)
///  - skip:   z = gain * (P f + b + 0.5 * R2 tanh(R1 f))  (additive shortcut)
/// f holds the box's per-quadrant channel means minus 0.5.
enum class Architecture { linear, chain, skip };

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view text);

struct SyntheticDetectorSpec {
  std::uint64_t seed = 7;
  int grid = 8;             // proposal cell size in pixels
  double threshold = 0.35;  // mean cell brightness needed to switch a cell on
  int class_count = 6;
  int channels = 3;
  double gain = 4.0;  // 0 gives an all-zero projection
  Architecture architecture = Architecture::linear;
  // Surrogates: P and b are the seed's projection plus this much seeded noise.
  double surrogate_noise = 0.0;
  std::uint64_t surrogate_seed = 0;
};

/// Deterministic stand-in detector.
///
/// Proposals are 4-connected components of grid cells whose mean brightness
/// exceeds the threshold; each component's cell-aligned bounding box is one
/// detection. Box geometry is piecewise constant in the pixels, class
/// probabilities are smooth, so the cross-entropy gradient is
/// analytic almost everywhere.
class SyntheticDetector final : public Detector {
 public:
  explicit SyntheticDetector(SyntheticDetectorSpec spec);

  std::vector<Detection> detect(const ImageTensor& image) const override;
  int class_count() const override { return spec_.class_count; }
  ImageTensor objective_gradient(const ImageTensor& image) const override;

  const SyntheticDetectorSpec& spec() const { return spec_; }

  std::vector<BoundingBox> proposals(const ImageTensor& image) const;

  /// Class logits for an image region summarized by the given features.
  std::vector<double> logits(const std::vector<double>& features) const;

  /// Per-quadrant channel means of `box`, centred at 0.5.
  std::vector<double> features(const ImageTensor& image, const BoundingBox& box) const;

  int feature_count() const { return 4 * spec_.channels; }

 private:
  void check_image(const ImageTensor& image) const;
  /// d logits / d features, row-major class_count x feature_count.
  std::vector<double> logit_jacobian(const std::vector<double>& features) const;

  SyntheticDetectorSpec spec_;
  std::vector<double> projection_;  // class_count x feature_count
  std::vector<double> bias_;        // class_count
  std::vector<double> mixing_;      // chain: class_count x class_count
  std::vector<double> skip_in_;     // skip: hidden x feature_count
  std::vector<double> skip_out_;    // skip: class_count x hidden
  int hidden_ = 0;
};

std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace garsdc
