#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "garsdc/detection.hpp"
#include "garsdc/image.hpp"
#include "garsdc/objective.hpp"
#include "garsdc/oracle.hpp"
#include "garsdc/patch.hpp"
#include "garsdc/rng.hpp"

namespace garsdc {

/// garsdc: random subsets + divide-and-conquer GA (the full method).
/// gars:   random subsets only.
/// ga:     whole-image crossover/mutation, no subsets.
enum class SearchVariant { garsdc, gars, ga };

std::string_view to_string(SearchVariant v);
SearchVariant parse_variant(std::string_view text);

struct GAParams {
  double cr = 0.8;
  double mr = 0.3;
  int t_dc = 4;
  std::uint64_t t_max = 4000;
  std::vector<std::uint64_t> milestones{20, 100, 400, 1000, 2000};
  FitnessWeights weights;
  double iou_thresh = 0.5;
  SearchVariant variant = SearchVariant::garsdc;
  bool parallel_quadrants = false;
  bool stop_on_success = true;
};

/// Throws std::invalid_argument on out-of-range rates, t_dc < 1, or
/// milestones that are not strictly increasing.
void validate(const GAParams& params);

/// round(0.05 * min(w, h)) halved once per milestone already reached,
/// floored at 4 and capped at min(w, h).
int side_length(int width, int height, std::uint64_t queries_used, std::span<const std::uint64_t> milestones);

/// Detector response for one perturbation, with its TP/FP split and fitness.
struct Evaluation {
  std::vector<Detection> detections;
  MatchResult match;
  FitnessValue fitness;

  bool any_true_positive() const { return !match.tp_indices.empty(); }
};

/// Binds everything needed to score a perturbation: one query per call.
class Evaluator {
 public:
  Evaluator(const QueryOracle& oracle, const ImageTensor& clean, std::span<const GroundTruthObject> gts,
            const FitnessWeights& weights, double iou_thresh)
      : oracle_(&oracle), clean_(&clean), gts_(gts), weights_(weights), iou_thresh_(iou_thresh) {}

  /// Throws BudgetExhausted / OracleUnavailable from the oracle.
  Evaluation evaluate(const Perturbation& delta) const;
  SubFitness sub_fitness(const Evaluation& e, const PatchIndex& patch) const;

  Evaluator with_oracle(const QueryOracle& oracle) const {
    return Evaluator(oracle, *clean_, gts_, weights_, iou_thresh_);
  }
  const ImageTensor& clean() const { return *clean_; }

 private:
  const QueryOracle* oracle_;
  const ImageTensor* clean_;
  std::span<const GroundTruthObject> gts_;
  FitnessWeights weights_;
  double iou_thresh_;
};

/// The two-member population, with the last response for each member when
/// it is still current.
struct Population {
  std::array<Perturbation, 2> members;
  std::array<std::optional<Evaluation>, 2> cache;
};

struct RandomSubsetStep {
  std::array<Perturbation, 2> candidates;
  PatchIndex patch;
};

/// Samples an a x a patch uniformly, then for each channel multiplies each
/// member's values inside the patch by an independent random sign.
RandomSubsetStep random_subset_step(const Population& pop, Rng& rng, int a);

/// Splits a patch into 2 x 2 parts (floor/ceil on odd sides), ordered
/// top-left, top-right, bottom-left, bottom-right.
std::vector<PatchIndex> partition_patch(const PatchIndex& patch);

enum class TraceEvent { init, rs, dc, merge, ga };
std::string_view to_string(TraceEvent e);

struct TraceRecord {
  std::uint64_t query = 0;  // 1-based
  double best = 0.0;        // best accepted fitness when the query was issued
  std::optional<PatchIndex> patch;
  TraceEvent event = TraceEvent::rs;
};

struct AttackTrace {
  std::vector<TraceRecord> records;
};

struct DcMember {
  Perturbation best;
  std::optional<Evaluation> evaluation;  // empty only if never evaluated
};

struct DcResult {
  std::array<DcMember, 2> members;
  std::vector<TraceRecord> records;  // query/best left for the caller to fill
  bool budget_exhausted = false;
  std::optional<std::string> error;  // oracle failure; the failed query keeps its record
};

/// Divide-and-conquer GA restricted to `region`.
///
/// Uncached members are evaluated first. Each of up to T rounds ranks the
/// members by sub-fitness (Relevant beats Irrelevant, ties go to member 1),
/// copies each region element from winner to loser with probability cr,
/// flips each loser region element with probability mr, and re-queries the
/// loser. The winner is never modified. Stops early when both sub-fitnesses
/// are Irrelevant. Returns each member's best-ever perturbation by
/// individual fitness. Budget exhaustion and oracle failures end the run
/// early and are reported in the result rather than thrown.
DcResult dc_ga(const Population& pop, const PatchIndex& region, int rounds, const Evaluator& evaluator,
               const GAParams& params, Rng& rng, TraceEvent tag = TraceEvent::dc);

struct AttackResult {
  Perturbation best;
  std::optional<Evaluation> best_evaluation;
  AttackTrace trace;
  std::uint64_t queries = 0;
  std::uint64_t iterations = 0;
  bool success = false;               // no true positive left at the best
  std::optional<std::string> error;   // set when the oracle failed mid-run
};

/// Runs the attack until the budget (min of params.t_max and the oracle's
/// own budget) is spent or, with stop_on_success, no TP remains.
AttackResult garsdc_attack(const ImageTensor& x, std::span<const GroundTruthObject> gts, const QueryOracle& oracle,
                           std::pair<Perturbation, Perturbation> init, const GAParams& params, Rng& rng);

}  // namespace garsdc
