#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "garsdc/rng.hpp"

namespace garsdc::subsetsel {

using Mask = std::uint32_t;

inline constexpr int kMaxGroundSet = 16;
inline constexpr int kMaxRatioGroundSet = 12;

/// Thrown when an operation's precondition (monotonicity, tractable size)
/// is not met. Callers treat it as a refusal rather than a failure.
class Refused : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Set function over {0..n-1} stored as an explicit table of 2^n values,
/// normalized so that f(empty) = 0.
class SetFunctionInstance {
 public:
  /// Throws std::invalid_argument on a table of the wrong size, non-finite
  /// values, or n outside [0, 16]. With `monotone` set and n <= 12 the
  /// claim is verified exhaustively.
  SetFunctionInstance(int n, std::vector<double> values, bool monotone);

  int size() const { return n_; }
  bool monotone() const { return monotone_; }
  Mask ground() const { return n_ == 0 ? 0 : static_cast<Mask>((std::uint64_t{1} << n_) - 1); }
  double operator()(Mask subset) const { return values_.at(subset); }
  const std::vector<double>& values() const { return values_; }

 private:
  int n_;
  std::vector<double> values_;
  bool monotone_;
};

/// True iff f(A) <= f(A + v) for every A and v (exhaustive).
bool is_monotone(const SetFunctionInstance& f, double tol = 1e-12);

struct PartitionScheme {
  std::vector<Mask> blocks;
};

/// Throws std::invalid_argument unless the blocks are nonempty, disjoint
/// and cover the ground set of size n.
void validate(const PartitionScheme& p, int n);

/// Shuffles the ground set and deals it round-robin into i blocks.
PartitionScheme even_partition(int n, int i, Rng& rng);

struct OptResult {
  double value = 0.0;
  Mask witness = 0;
};

/// Exhaustive max of f over subsets of size <= z, restricted to `within`.
/// Ties keep the smallest mask. Refuses n > 16.
OptResult brute_force_opt(const SetFunctionInstance& f, int z, std::optional<Mask> within = std::nullopt);

struct Ratio {
  double value = 1.0;
  bool degenerate = false;  // every denominator was zero
};

/// min over L subset of u and nonempty M disjoint from L with |M| <= l of
/// sum_{v in M} (f(L+v) - f(L)) / (f(L+M) - f(L)). Refuses n > 12.
Ratio gamma_ratio(const SetFunctionInstance& f, Mask u, int l);

/// Same minimum with L drawn from `l_pool` (|L| <= l_max) and M drawn from
/// `m_pool` minus L (1 <= |M| <= m_max).
Ratio gamma_ratio_over(const SetFunctionInstance& f, Mask l_pool, int l_max, Mask m_pool, int m_max);

/// min over u subset of m and v outside m of
/// (f(u+v) - f(u)) / (f(m+v) - f(m)). Refuses n > 12.
Ratio alpha_ratio(const SetFunctionInstance& f);

/// Per-block ratio: min over blocks of gamma_ratio_over(f, s_j, z-1, s_j, z).
Ratio gamma_min(const SetFunctionInstance& f, const PartitionScheme& p, int z);

struct SubsetGAParams {
  /// Iterations per block = ceil(scale * e * z^2 * n_j * (1 + ln i)).
  /// Scale 2 is only the expected hitting time of the bound, so a single run
  /// of that length misses with constant probability; 16 leaves a margin.
  double iteration_scale = 16.0;
  double tolerance = 1e-9;
};

struct BoundReport {
  int n = 0;
  int z = 0;
  int blocks = 0;
  double opt = 0.0;
  Mask opt_witness = 0;
  std::vector<double> block_opt;    // exhaustive best inside each block
  std::vector<double> block_found;  // best found by the search in each block
  Ratio gamma_empty;                // gamma over (empty, z)
  Ratio alpha;
  Ratio gamma_min;
  double achieved = 0.0;
  Mask achieved_subset = 0;
  double block_rhs = 0.0;             // max{alpha/i, gamma_empty/z} * OPT
  double selection_rhs = 0.0;             // (1 - e^-gamma_min) * block_rhs
  bool block_holds = false;
  bool selection_holds = false;
  std::uint64_t iterations = 0;
  std::optional<std::uint64_t> iterations_to_threshold;  // first time achieved >= selection_rhs

  bool holds() const { return block_holds && selection_holds; }
};

struct SelectionResult {
  Mask subset = 0;
  BoundReport report;
};

/// Archive-based evolutionary search on each block, a final search over the
/// union of the block winners, best of everything returned. Every quantity
/// in the report is computed exhaustively. Refuses non-monotone f, n > 12
/// (ratios) and z < 1.
SelectionResult dc_subset_select(const SetFunctionInstance& f, const PartitionScheme& partition, int z,
                                 const SubsetGAParams& params, Rng& rng);

/// Evolutionary search alone: best subset of `within` with size <= z.
struct SearchOutcome {
  Mask best = 0;
  double value = 0.0;
  std::uint64_t iterations = 0;
  std::optional<std::uint64_t> reached;  // iteration at which `target` was first met
};
SearchOutcome archive_search(const SetFunctionInstance& f, Mask within, int z, std::uint64_t iterations, Rng& rng,
                             std::optional<double> target = std::nullopt);

// Instance families.
enum class Family { modular, coverage, facility, complementary, nonmonotone };
std::string to_string(Family f);
Family parse_family(const std::string& text);
SetFunctionInstance generate(Family family, int n, Rng& rng);

// Structured text I/O.
struct InstanceFile {
  SetFunctionInstance f;
  int z = 1;
};
InstanceFile read_instance(const std::string& path);
void write_instance(const std::string& path, const SetFunctionInstance& f, int z);
std::string to_json(const BoundReport& r);

}  // namespace garsdc::subsetsel
