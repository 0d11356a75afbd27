#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace garsdc {

/// Axis-aligned box in pixel coordinates, corner form.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  /// x1 < x2, y1 < y2, all coordinates finite and non-negative.
  bool valid() const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Throws std::invalid_argument when the box violates its invariants.
void validate(const BoundingBox& box);

struct GroundTruthObject {
  BoundingBox box;
  int class_id = 0;
};

struct Detection {
  BoundingBox box;
  std::vector<double> probs;

  /// argmax of probs; lowest index wins ties.
  int predicted_class() const;
  /// max of probs.
  double confidence() const;
};

/// Checks box validity, probability range and normalization.
void validate(const Detection& det, double sum_tolerance = 1e-6);

struct MatchResult {
  std::vector<std::size_t> tp_indices;  // ascending
  std::vector<std::size_t> fp_indices;  // ascending
  std::map<std::size_t, std::size_t> matched_gt;  // detection -> ground truth

  bool is_tp(std::size_t det) const { return matched_gt.contains(det); }
};

/// Intersection over union. Throws std::invalid_argument on an invalid box.
double iou(const BoundingBox& a, const BoundingBox& b);

/// One-to-one TP/FP split against ground truth.
///
/// A detection may be matched to a ground-truth object of its predicted
/// class with IoU strictly above `iou_thresh`. Detections are visited in
/// descending confidence (ties by index) and each is kept matched whenever
/// an augmenting path exists, so the TP set is the lexicographically
/// greatest matchable set in that order. It coincides with plain greedy
/// assignment unless ground-truth boxes overlap each other above threshold.
MatchResult match_detections(std::span<const Detection> dets,
                             std::span<const GroundTruthObject> gts,
                             double iou_thresh = 0.5);

enum class SizeBucket { all, small, medium, large };

std::string_view to_string(SizeBucket bucket);

/// COCO area ranges: small < 32^2 <= medium < 96^2 <= large.
bool in_bucket(const BoundingBox& box, SizeBucket bucket);

struct ImageEval {
  std::vector<Detection> detections;
  std::vector<GroundTruthObject> ground_truth;
};

/// Mean over ground-truth classes of all-point interpolated AP at a single
/// IoU threshold. Ground truth outside the bucket is ignored COCO-style:
/// detections matched to it, and unmatched detections whose own area lies
/// outside the bucket, count neither as TP nor FP. Returns nullopt when the
/// bucket holds no ground truth at all.
std::optional<double> average_precision(std::span<const ImageEval> per_image,
                                        double iou_thresh = 0.5,
                                        SizeBucket bucket = SizeBucket::all);

}  // namespace garsdc
