#pragma once

#include <optional>
#include <span>

#include "garsdc/detection.hpp"
#include "garsdc/patch.hpp"

namespace garsdc {

/// Scalarization weights; both default to 0.5.
struct FitnessWeights {
  double tp = 0.5;
  double fp = 0.5;
};

void validate(const FitnessWeights& w);

/// Individual fitness in maximization form: value = w.tp * tp_term - w.fp * fp_term.
/// Maximizing it is the same as minimizing w.tp * (-tp_term) + w.fp * fp_term.
struct FitnessValue {
  double value = 0.0;
  double tp_term = 0.0;
  double fp_term = 0.0;
};

/// Sub-component fitness: either a value, or Irrelevant when no detection
/// overlaps the patch at all.
class SubFitness {
 public:
  static SubFitness relevant(double value) { return SubFitness(value); }
  static SubFitness irrelevant() { return SubFitness(); }

  bool is_relevant() const { return value_.has_value(); }
  /// Only meaningful when relevant.
  double value() const { return *value_; }

  /// Relevant outranks Irrelevant; among relevant values the larger wins.
  friend bool outranks(const SubFitness& a, const SubFitness& b) {
    if (a.is_relevant() != b.is_relevant()) return a.is_relevant();
    return a.is_relevant() && a.value() > b.value();
  }

 private:
  SubFitness() = default;
  explicit SubFitness(double v) : value_(v) {}
  std::optional<double> value_;
};

/// max_{l != c} probs[l] - probs[c]. Throws std::invalid_argument when fewer
/// than two classes or c is out of range.
double cw_margin(std::span<const double> probs, int c);

/// tp_term sums cw_margin over TP detections, fp_term over FP detections,
/// each at the detection's predicted class (for a TP that is also the
/// matched ground-truth class).
FitnessValue individual_fitness(std::span<const Detection> dets, const MatchResult& match,
                                const FitnessWeights& w);

/// Same sums with every margin weighted by iou(detection, patch).
/// Throws std::invalid_argument when the patch leaves the image.
SubFitness subcomponent_fitness(std::span<const Detection> dets, const MatchResult& match, const PatchIndex& patch,
                                int image_width, int image_height, const FitnessWeights& w);

}  // namespace garsdc
