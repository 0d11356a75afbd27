#include "garsdc/objective.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace garsdc {

void validate(const FitnessWeights& w) {
  if (!(w.tp >= 0.0 && w.fp >= 0.0) || !(w.tp + w.fp > 0.0)) {
    throw std::invalid_argument("fitness weights must be non-negative with a positive sum");
  }
}

double cw_margin(std::span<const double> probs, int c) {
  if (probs.size() < 2) throw std::invalid_argument("cw_margin needs at least two classes");
  if (c < 0 || static_cast<std::size_t>(c) >= probs.size()) throw std::invalid_argument("class index out of range");
  double other = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < probs.size(); ++l) {
    if (static_cast<int>(l) != c) other = std::max(other, probs[l]);
  }
  return other - probs[static_cast<std::size_t>(c)];
}

namespace {

template <typename Weight>
FitnessValue weighted_terms(std::span<const Detection> dets, const MatchResult& match, const FitnessWeights& w,
                            Weight&& weight) {
  FitnessValue out;
  for (std::size_t d = 0; d < dets.size(); ++d) {
    const double k = weight(dets[d]);
    if (k == 0.0) continue;
    const double margin = cw_margin(dets[d].probs, dets[d].predicted_class()) * k;
    (match.is_tp(d) ? out.tp_term : out.fp_term) += margin;
  }
  out.value = w.tp * out.tp_term - w.fp * out.fp_term;
  return out;
}

}  // namespace

FitnessValue individual_fitness(std::span<const Detection> dets, const MatchResult& match, const FitnessWeights& w) {
  return weighted_terms(dets, match, w, [](const Detection&) { return 1.0; });
}

SubFitness subcomponent_fitness(std::span<const Detection> dets, const MatchResult& match, const PatchIndex& patch,
                                int image_width, int image_height, const FitnessWeights& w) {
  if (!patch.inside(image_width, image_height)) throw std::invalid_argument("patch lies outside the image");
  const BoundingBox patch_box = patch.as_box();
  bool any = false;
  const FitnessValue f = weighted_terms(dets, match, w, [&](const Detection& det) {
    const double k = iou(det.box, patch_box);
    any = any || k != 0.0;
    return k;
  });
  return any ? SubFitness::relevant(f.value) : SubFitness::irrelevant();
}

}  // namespace garsdc
