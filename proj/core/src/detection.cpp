#include "garsdc/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace garsdc {

bool BoundingBox::valid() const {
  const bool finite = std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2);
  return finite && x1 >= 0.0 && y1 >= 0.0 && x1 < x2 && y1 < y2;
}

void validate(const BoundingBox& box) {
  if (!box.valid()) {
    throw std::invalid_argument("invalid box [" + std::to_string(box.x1) + "," + std::to_string(box.y1) + "," +
                                std::to_string(box.x2) + "," + std::to_string(box.y2) + "]");
  }
}

int Detection::predicted_class() const {
  if (probs.empty()) return -1;
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double Detection::confidence() const {
  if (probs.empty()) return 0.0;
  return *std::max_element(probs.begin(), probs.end());
}

void validate(const Detection& det, double sum_tolerance) {
  validate(det.box);
  if (det.probs.empty()) throw std::invalid_argument("detection has an empty probability vector");
  double sum = 0.0;
  for (double p : det.probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > sum_tolerance) {
    throw std::invalid_argument("probabilities sum to " + std::to_string(sum));
  }
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  validate(a);
  validate(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

std::vector<std::size_t> confidence_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence() > dets[b].confidence();
  });
  return order;
}

struct Bipartite {
  // candidates[d] = ground-truth indices, best IoU first
  std::vector<std::vector<std::size_t>> candidates;
  std::vector<long> gt_owner;  // ground truth -> detection or -1

  bool augment(std::size_t d, std::vector<char>& visited) {
    for (std::size_t g : candidates[d]) {
      if (visited[g]) continue;
      visited[g] = 1;
      if (gt_owner[g] < 0 || augment(static_cast<std::size_t>(gt_owner[g]), visited)) {
        gt_owner[g] = static_cast<long>(d);
        return true;
      }
    }
    return false;
  }
};

}  // namespace

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
                             double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw std::invalid_argument("iou_thresh must lie in (0,1)");

  Bipartite graph;
  graph.candidates.resize(dets.size());
  graph.gt_owner.assign(gts.size(), -1);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    const int cls = dets[d].predicted_class();
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != cls) continue;
      const double overlap = iou(dets[d].box, gts[g].box);
      if (overlap > iou_thresh) scored.emplace_back(overlap, g);
    }
    std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (auto& [overlap, g] : scored) graph.candidates[d].push_back(g);
  }

  for (std::size_t d : confidence_order(dets)) {
    if (graph.candidates[d].empty()) continue;
    std::vector<char> visited(gts.size(), 0);
    graph.augment(d, visited);
  }

  MatchResult result;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (graph.gt_owner[g] >= 0) result.matched_gt[static_cast<std::size_t>(graph.gt_owner[g])] = g;
  }
  for (std::size_t d = 0; d < dets.size(); ++d) {
    (result.is_tp(d) ? result.tp_indices : result.fp_indices).push_back(d);
  }
  return result;
}

std::string_view to_string(SizeBucket bucket) {
  switch (bucket) {
    case SizeBucket::all: return "all";
    case SizeBucket::small: return "small";
    case SizeBucket::medium: return "medium";
    case SizeBucket::large: return "large";
  }
  return "unknown";
}

bool in_bucket(const BoundingBox& box, SizeBucket bucket) {
  constexpr double kSmall = 32.0 * 32.0;
  constexpr double kMedium = 96.0 * 96.0;
  const double area = box.area();
  switch (bucket) {
    case SizeBucket::all: return true;
    case SizeBucket::small: return area < kSmall;
    case SizeBucket::medium: return area >= kSmall && area < kMedium;
    case SizeBucket::large: return area >= kMedium;
  }
  return false;
}

namespace {

struct ScoredDetection {
  double confidence;
  std::size_t image;
  std::size_t index;
};

double class_average_precision(std::span<const ImageEval> per_image, int cls, double iou_thresh,
                               SizeBucket bucket, std::size_t positives) {
  std::vector<ScoredDetection> ranked;
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    const auto& dets = per_image[i].detections;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      if (dets[d].predicted_class() == cls) ranked.push_back({dets[d].confidence(), i, d});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ScoredDetection& a, const ScoredDetection& b) { return a.confidence > b.confidence; });

  std::vector<std::vector<char>> taken(per_image.size());
  for (std::size_t i = 0; i < per_image.size(); ++i) taken[i].assign(per_image[i].ground_truth.size(), 0);

  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const auto& r : ranked) {
    const auto& img = per_image[r.image];
    const Detection& det = img.detections[r.index];
    // prefer in-bucket ground truth; fall back to ignored ground truth
    long best = -1;
    bool best_ignored = false;
    for (const bool want_ignored : {false, true}) {
      double best_iou = iou_thresh;
      for (std::size_t g = 0; g < img.ground_truth.size(); ++g) {
        const auto& gt = img.ground_truth[g];
        if (gt.class_id != cls || taken[r.image][g]) continue;
        if (in_bucket(gt.box, bucket) == want_ignored) continue;
        const double overlap = iou(det.box, gt.box);
        if (overlap > best_iou) {
          best = static_cast<long>(g);
          best_iou = overlap;
        }
      }
      if (best >= 0) {
        best_ignored = want_ignored;
        break;
      }
    }
    if (best >= 0) {
      taken[r.image][static_cast<std::size_t>(best)] = 1;
      if (best_ignored) continue;
      ++tp;
    } else {
      if (!in_bucket(det.box, bucket)) continue;
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
  }

  // all-point interpolation
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

}  // namespace

std::optional<double> average_precision(std::span<const ImageEval> per_image, double iou_thresh,
                                        SizeBucket bucket) {
  std::map<int, std::size_t> positives;
  for (const auto& img : per_image) {
    for (const auto& gt : img.ground_truth) {
      if (in_bucket(gt.box, bucket)) ++positives[gt.class_id];
    }
  }
  if (positives.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& [cls, count] : positives) {
    sum += class_average_precision(per_image, cls, iou_thresh, bucket, count);
  }
  return sum / static_cast<double>(positives.size());
}

}  // namespace garsdc
