#include "garsdc/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <thread>

namespace garsdc {

std::string_view to_string(SearchVariant v) {
  switch (v) {
    case SearchVariant::garsdc: return "garsdc";
    case SearchVariant::gars: return "gars";
    case SearchVariant::ga: return "ga";
  }
  return "unknown";
}

SearchVariant parse_variant(std::string_view text) {
  if (text == "garsdc") return SearchVariant::garsdc;
  if (text == "gars") return SearchVariant::gars;
  if (text == "ga") return SearchVariant::ga;
  throw std::invalid_argument("unknown search variant '" + std::string(text) + "'");
}

std::string_view to_string(TraceEvent e) {
  switch (e) {
    case TraceEvent::init: return "init";
    case TraceEvent::rs: return "rs";
    case TraceEvent::dc: return "dc";
    case TraceEvent::merge: return "merge";
    case TraceEvent::ga: return "ga";
  }
  return "unknown";
}

void validate(const GAParams& p) {
  if (!(p.cr >= 0.0 && p.cr <= 1.0)) throw std::invalid_argument("crossover rate must lie in [0,1]");
  if (!(p.mr >= 0.0 && p.mr <= 1.0)) throw std::invalid_argument("mutation rate must lie in [0,1]");
  if (p.t_dc < 1) throw std::invalid_argument("t_dc must be at least 1");
  if (!(p.iou_thresh > 0.0 && p.iou_thresh < 1.0)) throw std::invalid_argument("iou_thresh must lie in (0,1)");
  for (std::size_t i = 1; i < p.milestones.size(); ++i) {
    if (p.milestones[i] <= p.milestones[i - 1]) throw std::invalid_argument("milestones must be strictly increasing");
  }
  validate(p.weights);
}

int side_length(int width, int height, std::uint64_t queries_used, std::span<const std::uint64_t> milestones) {
  const int limit = std::min(width, height);
  int a = static_cast<int>(std::lround(0.05 * limit));
  for (std::uint64_t m : milestones) {
    if (queries_used >= m) a /= 2;
  }
  a = std::max(a, 4);
  return std::max(1, std::min(a, limit));
}

Evaluation Evaluator::evaluate(const Perturbation& delta) const {
  Evaluation e;
  e.detections = oracle_->detect_clipped(*clean_, delta);
  e.match = match_detections(e.detections, gts_, iou_thresh_);
  e.fitness = individual_fitness(e.detections, e.match, weights_);
  return e;
}

SubFitness Evaluator::sub_fitness(const Evaluation& e, const PatchIndex& patch) const {
  return subcomponent_fitness(e.detections, e.match, patch, clean_->width, clean_->height, weights_);
}

RandomSubsetStep random_subset_step(const Population& pop, Rng& rng, int a) {
  const Perturbation& ref = pop.members[0];
  if (a < 1 || a > ref.width || a > ref.height) throw std::invalid_argument("patch side does not fit the image");
  RandomSubsetStep step{pop.members, {}};
  const int r = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(ref.width - a + 1)));
  const int s = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(ref.height - a + 1)));
  step.patch = PatchIndex::square(r, s, a);
  for (int ch = 0; ch < ref.channels; ++ch) {
    const int rho[2] = {rng.sign(), rng.sign()};
    for (int m = 0; m < 2; ++m) {
      if (rho[m] > 0) continue;
      Perturbation& d = step.candidates[static_cast<std::size_t>(m)];
      for (int y = s; y < s + a; ++y) {
        for (int x = r; x < r + a; ++x) d.at(x, y, ch) = -d.at(x, y, ch);
      }
    }
  }
  return step;
}

std::vector<PatchIndex> partition_patch(const PatchIndex& patch) {
  if (patch.width < 2 || patch.height < 2) throw std::invalid_argument("patch too small to partition");
  const int w0 = patch.width / 2;
  const int w1 = patch.width - w0;
  const int h0 = patch.height / 2;
  const int h1 = patch.height - h0;
  return {{patch.r, patch.s, w0, h0},
          {patch.r + w0, patch.s, w1, h0},
          {patch.r, patch.s + h0, w0, h1},
          {patch.r + w0, patch.s + h0, w1, h1}};
}

namespace {

constexpr double kUnset = -std::numeric_limits<double>::infinity();

double fitness_of(const std::optional<Evaluation>& e) { return e ? e->fitness.value : kUnset; }

template <typename Fn>
void for_each_element(const PatchIndex& region, int channels, Fn&& fn) {
  for (int y = region.s; y < region.s + region.height; ++y) {
    for (int x = region.r; x < region.r + region.width; ++x) {
      for (int ch = 0; ch < channels; ++ch) fn(x, y, ch);
    }
  }
}

void copy_region(Perturbation& dst, const Perturbation& src, const PatchIndex& region) {
  for_each_element(region, dst.channels, [&](int x, int y, int ch) { dst.at(x, y, ch) = src.at(x, y, ch); });
}

}  // namespace

DcResult dc_ga(const Population& pop, const PatchIndex& region, int rounds, const Evaluator& evaluator,
               const GAParams& params, Rng& rng, TraceEvent tag) {
  std::array<Perturbation, 2> current = pop.members;
  std::array<std::optional<Evaluation>, 2> eval = pop.cache;
  DcResult out;
  out.members = {DcMember{current[0], eval[0]}, DcMember{current[1], eval[1]}};

  auto query = [&](std::size_t m) {
    out.records.push_back({0, 0.0, region, tag});
    try {
      eval[m] = evaluator.evaluate(current[m]);
    } catch (const BudgetExhausted&) {
      out.records.pop_back();
      throw;
    }
    if (eval[m]->fitness.value > fitness_of(out.members[m].evaluation)) {
      out.members[m] = {current[m], eval[m]};
    }
  };

  try {
    for (std::size_t m = 0; m < 2; ++m) {
      if (!eval[m]) query(m);
    }
    for (int t = 0; t < rounds; ++t) {
      const SubFitness s0 = evaluator.sub_fitness(*eval[0], region);
      const SubFitness s1 = evaluator.sub_fitness(*eval[1], region);
      if (!s0.is_relevant() && !s1.is_relevant()) break;
      const std::size_t winner = outranks(s0, s1) ? 0 : 1;
      const std::size_t loser = 1 - winner;
      const Perturbation& w = current[winner];
      Perturbation& l = current[loser];
      // The loser only needs a new query if some element actually changed.
      std::vector<double> before;
      before.reserve(static_cast<std::size_t>(region.pixel_count() * l.channels));
      for_each_element(region, l.channels, [&](int x, int y, int ch) { before.push_back(l.at(x, y, ch)); });
      for_each_element(region, l.channels, [&](int x, int y, int ch) {
        if (rng.bernoulli(params.cr)) l.at(x, y, ch) = w.at(x, y, ch);
      });
      for_each_element(region, l.channels, [&](int x, int y, int ch) {
        if (rng.bernoulli(params.mr)) l.at(x, y, ch) = -l.at(x, y, ch);
      });
      std::size_t k = 0;
      bool changed = false;
      for_each_element(region, l.channels, [&](int x, int y, int ch) { changed = changed || l.at(x, y, ch) != before[k++]; });
      if (changed) query(loser);
    }
  } catch (const BudgetExhausted&) {
    out.budget_exhausted = true;
  } catch (const OracleUnavailable& e) {
    out.error = e.what();
  }
  return out;
}

namespace {

/// Mutable state of one garsdc_attack call.
class AttackRun {
 public:
  AttackRun(const ImageTensor& x, std::span<const GroundTruthObject> gts, const QueryOracle& oracle,
            const GAParams& params, Rng& rng)
      : budget_(params.t_max, &oracle.budget()),
        oracle_(oracle.detector(), budget_),
        evaluator_(oracle_, x, gts, params.weights, params.iou_thresh),
        params_(params),
        rng_(rng),
        x_(x) {}

  AttackResult run(std::pair<Perturbation, Perturbation> init) {
    pop_.members = {std::move(init.first), std::move(init.second)};
    for (const auto& m : pop_.members) {
      if (!m.fits(x_)) throw std::invalid_argument("initial perturbation shape does not match the image");
      if (m.linf() > m.epsilon) throw std::invalid_argument("initial perturbation exceeds epsilon");
    }
    AttackResult result;
    try {
      for (std::size_t m = 0; m < 2; ++m) {
        record(std::nullopt, TraceEvent::init);
        pop_.cache[m] = evaluator_.evaluate(pop_.members[m]);
        refresh_best();
      }
      while (!done()) {
        ++result.iterations;
        if (params_.variant == SearchVariant::ga) {
          ga_iteration();
        } else {
          subset_iteration();
        }
      }
    } catch (const BudgetExhausted&) {
      // budget spent mid-iteration: keep what was accepted
      drop_unanswered_record();
    } catch (const OracleUnavailable& e) {
      drop_unanswered_record();
      result.error = e.what();
    }
    const std::size_t b = best_index();
    result.best = pop_.members[b];
    result.best_evaluation = pop_.cache[b];
    result.trace = std::move(trace_);
    result.queries = budget_.used();
    result.success = result.best_evaluation && !result.best_evaluation->any_true_positive();
    return result;
  }

 private:
  std::size_t best_index() const {
    return fitness_of(pop_.cache[1]) > fitness_of(pop_.cache[0]) ? 1 : 0;
  }

  void refresh_best() { best_ = std::max(best_, fitness_of(pop_.cache[best_index()])); }

  bool done() const {
    if (budget_.exhausted()) return true;
    const auto& e = pop_.cache[best_index()];
    return params_.stop_on_success && e && !e->any_true_positive();
  }

  void record(std::optional<PatchIndex> patch, TraceEvent event) {
    trace_.records.push_back({trace_.records.size() + 1, best_, patch, event});
  }

  // A record is written before its query; if the query never happened it must go.
  void drop_unanswered_record() {
    while (trace_.records.size() > budget_.used()) trace_.records.pop_back();
  }

  void append(std::vector<TraceRecord>& records) {
    for (TraceRecord& r : records) {
      r.query = trace_.records.size() + 1;
      r.best = best_;
      trace_.records.push_back(r);
    }
  }

  void accept(std::size_t m, Perturbation candidate, std::optional<Evaluation> e) {
    if (e && e->fitness.value > fitness_of(pop_.cache[m])) {
      pop_.members[m] = std::move(candidate);
      pop_.cache[m] = std::move(e);
      refresh_best();
    }
  }

  void subset_iteration() {
    const int a = side_length(x_.width, x_.height, budget_.used(), params_.milestones);
    RandomSubsetStep step = random_subset_step(pop_, rng_, a);
    Population next{step.candidates, {}};
    try {
      for (std::size_t m = 0; m < 2; ++m) {
        record(step.patch, TraceEvent::rs);
        next.cache[m] = evaluator_.evaluate(next.members[m]);
      }
    } catch (const BudgetExhausted&) {
      drop_unanswered_record();
      accept(0, std::move(next.members[0]), std::move(next.cache[0]));
      throw;
    }

    if (params_.variant == SearchVariant::garsdc && step.patch.width >= 2) {
      const auto quads = partition_patch(step.patch);
      bool flag = false;
      for (const PatchIndex& q : quads) {
        for (std::size_t m = 0; m < 2; ++m) flag = flag || evaluator_.sub_fitness(*next.cache[m], q).is_relevant();
      }
      if (flag) divide_and_conquer(next, step.patch, quads);
    }
    for (std::size_t m = 0; m < 2; ++m) accept(m, std::move(next.members[m]), std::move(next.cache[m]));
  }

  void divide_and_conquer(Population& next, const PatchIndex& patch, const std::vector<PatchIndex>& quads) {
    const int rounds = params_.t_dc - 1;
    const std::size_t n = quads.size();

    // Deterministic allotments and streams, fixed before any quadrant runs.
    std::vector<std::uint64_t> allotment(n);
    std::uint64_t left = budget_.remaining();
    for (std::size_t j = 0; j < n; ++j) {
      allotment[j] = std::min<std::uint64_t>(static_cast<std::uint64_t>(rounds), left);
      left -= allotment[j];
    }
    std::vector<Rng> streams;
    for (std::size_t j = 0; j < n; ++j) streams.push_back(rng_.fork(j));

    std::vector<std::unique_ptr<QueryBudget>> budgets;
    std::vector<std::unique_ptr<QueryOracle>> oracles;
    for (std::size_t j = 0; j < n; ++j) {
      budgets.push_back(std::make_unique<QueryBudget>(allotment[j], &budget_));
      oracles.push_back(std::make_unique<QueryOracle>(oracle_.detector(), *budgets[j]));
    }
    std::vector<DcResult> results(n);
    auto run_quadrant = [&](std::size_t j) {
      results[j] = dc_ga(next, quads[j], rounds, evaluator_.with_oracle(*oracles[j]), params_, streams[j],
                         TraceEvent::dc);
    };
    if (params_.parallel_quadrants) {
      std::vector<std::jthread> workers;
      for (std::size_t j = 0; j < n; ++j) workers.emplace_back(run_quadrant, j);
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        run_quadrant(j);
        if (results[j].error) break;
      }
    }
    // every charged query keeps its record, failed ones included
    std::optional<std::string> failure;
    for (std::size_t j = 0; j < n; ++j) {
      append(results[j].records);
      if (results[j].error && !failure) failure = results[j].error;
    }
    if (failure) throw OracleUnavailable(*failure);

    // Install every quadrant's winner, then one merge round over the whole patch.
    Population merged = next;
    for (std::size_t m = 0; m < 2; ++m) {
      for (std::size_t j = 0; j < n; ++j) copy_region(merged.members[m], results[j].members[m].best, quads[j]);
      merged.cache[m] = known_evaluation(merged.members[m], next, results, m);
    }
    DcResult merge = dc_ga(merged, patch, 1, evaluator_, params_, rng_, TraceEvent::merge);
    append(merge.records);
    if (merge.error) throw OracleUnavailable(*merge.error);

    for (std::size_t m = 0; m < 2; ++m) {
      const DcMember* best = nullptr;
      double best_f = fitness_of(next.cache[m]);
      for (std::size_t j = 0; j <= n; ++j) {
        const DcMember& c = j < n ? results[j].members[m] : merge.members[m];
        if (fitness_of(c.evaluation) > best_f) {
          best = &c;
          best_f = fitness_of(c.evaluation);
        }
      }
      if (best != nullptr) {
        next.members[m] = best->best;
        next.cache[m] = best->evaluation;
      }
    }
    if (merge.budget_exhausted) throw BudgetExhausted();
  }

  static std::optional<Evaluation> known_evaluation(const Perturbation& delta, const Population& next,
                                                    const std::vector<DcResult>& results, std::size_t m) {
    if (delta == next.members[m]) return next.cache[m];
    for (const DcResult& r : results) {
      if (r.members[m].evaluation && delta == r.members[m].best) return r.members[m].evaluation;
    }
    return std::nullopt;
  }

  void ga_iteration() {
    const std::size_t winner = best_index();
    const std::size_t loser = 1 - winner;
    Perturbation child = pop_.members[loser];
    const Perturbation& w = pop_.members[winner];
    for (std::size_t i = 0; i < child.data.size(); ++i) {
      if (rng_.bernoulli(params_.cr)) child.data[i] = w.data[i];
    }
    for (double& v : child.data) {
      if (rng_.bernoulli(params_.mr)) v = -v;
    }
    record(std::nullopt, TraceEvent::ga);
    Evaluation e = evaluator_.evaluate(child);
    // generational replacement of the loser; the winner is kept (elitism)
    pop_.members[loser] = std::move(child);
    pop_.cache[loser] = std::move(e);
    refresh_best();
  }

  QueryBudget budget_;
  QueryOracle oracle_;
  Evaluator evaluator_;
  const GAParams& params_;
  Rng& rng_;
  const ImageTensor& x_;
  Population pop_;
  AttackTrace trace_;
  double best_ = kUnset;
};

}  // namespace

AttackResult garsdc_attack(const ImageTensor& x, std::span<const GroundTruthObject> gts, const QueryOracle& oracle,
                           std::pair<Perturbation, Perturbation> init, const GAParams& params, Rng& rng) {
  validate(params);
  AttackRun run(x, gts, oracle, params, rng);
  return run.run(std::move(init));
}

}  // namespace garsdc
