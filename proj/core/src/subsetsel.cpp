#include "garsdc/subsetsel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace garsdc::subsetsel {

namespace {

constexpr double kZero = 1e-12;

int popcount(Mask m) { return std::popcount(m); }

void require_ratio_size(const SetFunctionInstance& f) {
  if (f.size() > kMaxRatioGroundSet) {
    throw Refused("ratio enumeration needs n <= " + std::to_string(kMaxRatioGroundSet));
  }
}

// Visits every submask of `m`, including 0 and m itself.
template <typename Fn>
void for_each_submask(Mask m, Fn&& fn) {
  Mask s = m;
  for (;;) {
    fn(s);
    if (s == 0) break;
    s = (s - 1) & m;
  }
}

void fold(Ratio& r, bool& any, double num, double den) {
  if (std::abs(den) <= kZero) return;
  const double q = num / den;
  if (!any || q < r.value) r.value = q;
  any = true;
}

nlohmann::json members(Mask m) {
  nlohmann::json out = nlohmann::json::array();
  for (int k = 0; k < 32; ++k) {
    if (m & (Mask{1} << k)) out.push_back(k);
  }
  return out;
}

nlohmann::json ratio_json(const Ratio& r) { return {{"value", r.value}, {"degenerate", r.degenerate}}; }

}  // namespace

SetFunctionInstance::SetFunctionInstance(int n, std::vector<double> values, bool monotone)
    : n_(n), values_(std::move(values)), monotone_(monotone) {
  if (n < 0 || n > kMaxGroundSet) throw std::invalid_argument("ground set size must lie in [0, 16]");
  if (values_.size() != (std::size_t{1} << n)) throw std::invalid_argument("value table must have 2^n entries");
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("value table contains a non-finite entry");
  }
  const double base = values_[0];
  for (double& v : values_) v -= base;
  if (monotone_ && n_ <= kMaxRatioGroundSet && !is_monotone(*this)) {
    throw std::invalid_argument("instance flagged monotone is not monotone");
  }
}

bool is_monotone(const SetFunctionInstance& f, double tol) {
  const Mask full = f.ground();
  for (Mask a = 0;; ++a) {
    for (int v = 0; v < f.size(); ++v) {
      const Mask bit = Mask{1} << v;
      if (!(a & bit) && f(a | bit) < f(a) - tol) return false;
    }
    if (a == full) break;
  }
  return true;
}

void validate(const PartitionScheme& p, int n) {
  const Mask full = n == 0 ? 0 : static_cast<Mask>((std::uint64_t{1} << n) - 1);
  Mask seen = 0;
  for (Mask b : p.blocks) {
    if (b == 0) throw std::invalid_argument("partition has an empty block");
    if (b & seen) throw std::invalid_argument("partition blocks overlap");
    if (b & ~full) throw std::invalid_argument("partition block leaves the ground set");
    seen |= b;
  }
  if (seen != full) throw std::invalid_argument("partition does not cover the ground set");
}

PartitionScheme even_partition(int n, int i, Rng& rng) {
  if (i < 1 || i > n) throw std::invalid_argument("block count must lie in [1, n]");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) order[static_cast<std::size_t>(k)] = k;
  for (std::size_t k = order.size(); k > 1; --k) {
    std::swap(order[k - 1], order[rng.uniform_index(k)]);
  }
  PartitionScheme p{std::vector<Mask>(static_cast<std::size_t>(i), 0)};
  for (std::size_t k = 0; k < order.size(); ++k) p.blocks[k % static_cast<std::size_t>(i)] |= Mask{1} << order[k];
  return p;
}

OptResult brute_force_opt(const SetFunctionInstance& f, int z, std::optional<Mask> within) {
  if (f.size() > kMaxGroundSet) throw Refused("brute force needs n <= 16");
  const Mask pool = within.value_or(f.ground()) & f.ground();
  OptResult best{f(0), 0};
  // submasks come out in decreasing order; keep the last (smallest) among ties
  for_each_submask(pool, [&](Mask s) {
    if (popcount(s) <= z && f(s) >= best.value) best = {f(s), s};
  });
  return best;
}

Ratio gamma_ratio_over(const SetFunctionInstance& f, Mask l_pool, int l_max, Mask m_pool, int m_max) {
  require_ratio_size(f);
  Ratio r;
  bool any = false;
  for_each_submask(l_pool, [&](Mask L) {
    if (popcount(L) > l_max) return;
    const double base = f(L);
    for_each_submask(m_pool & ~L, [&](Mask M) {
      if (M == 0 || popcount(M) > m_max) return;
      double num = 0.0;
      for (Mask rest = M; rest != 0; rest &= rest - 1) num += f(L | (rest & -rest)) - base;
      fold(r, any, num, f(L | M) - base);
    });
  });
  if (!any) r = {1.0, true};
  return r;
}

Ratio gamma_ratio(const SetFunctionInstance& f, Mask u, int l) {
  return gamma_ratio_over(f, u, f.size(), f.ground(), l);
}

Ratio alpha_ratio(const SetFunctionInstance& f) {
  require_ratio_size(f);
  Ratio r;
  bool any = false;
  const Mask full = f.ground();
  for_each_submask(full, [&](Mask m) {
    for (Mask outside = full & ~m; outside != 0; outside &= outside - 1) {
      const Mask v = outside & -outside;
      const double den = f(m | v) - f(m);
      if (std::abs(den) <= kZero) continue;
      for_each_submask(m, [&](Mask u) { fold(r, any, f(u | v) - f(u), den); });
    }
  });
  if (!any) r = {1.0, true};
  return r;
}

Ratio gamma_min(const SetFunctionInstance& f, const PartitionScheme& p, int z) {
  Ratio out{std::numeric_limits<double>::infinity(), true};
  for (Mask b : p.blocks) {
    const Ratio g = gamma_ratio_over(f, b, z - 1, b, z);
    if (g.degenerate) continue;
    if (out.degenerate || g.value < out.value) out = g;
  }
  if (out.degenerate) out = {1.0, true};
  return out;
}

SearchOutcome archive_search(const SetFunctionInstance& f, Mask within, int z, std::uint64_t iterations, Rng& rng,
                             std::optional<double> target) {
  const int n = popcount(within);
  SearchOutcome out;
  out.value = f(0);
  if (target && out.value >= *target) out.reached = 0;
  if (n == 0) return out;

  struct Entry {
    Mask set;
    double value;
  };
  std::vector<Entry> archive{{0, f(0)}};
  std::vector<Mask> bits;
  for (Mask rest = within; rest != 0; rest &= rest - 1) bits.push_back(rest & -rest);
  const double flip = 1.0 / n;

  for (std::uint64_t t = 1; t <= iterations; ++t) {
    const Entry& parent = archive[rng.uniform_index(archive.size())];
    Mask child = parent.set;
    for (Mask b : bits) {
      if (rng.bernoulli(flip)) child ^= b;
    }
    out.iterations = t;
    const int size = popcount(child);
    if (size >= 2 * z) continue;
    const double value = f(child);
    const bool dominated = std::any_of(archive.begin(), archive.end(), [&](const Entry& e) {
      return e.value >= value && popcount(e.set) <= size;
    });
    if (dominated) continue;
    std::erase_if(archive, [&](const Entry& e) { return value >= e.value && size <= popcount(e.set); });
    archive.push_back({child, value});
    if (size <= z && value > out.value) {
      out.best = child;
      out.value = value;
      if (target && !out.reached && value >= *target) out.reached = t;
    }
  }
  return out;
}

SelectionResult dc_subset_select(const SetFunctionInstance& f, const PartitionScheme& partition, int z,
                                 const SubsetGAParams& params, Rng& rng) {
  if (!f.monotone()) throw Refused("subset selection guarantee needs a monotone function");
  require_ratio_size(f);
  if (z < 1) throw std::invalid_argument("budget z must be at least 1");
  validate(partition, f.size());

  BoundReport rep;
  rep.n = f.size();
  rep.z = z;
  rep.blocks = static_cast<int>(partition.blocks.size());
  const OptResult opt = brute_force_opt(f, z);
  rep.opt = opt.value;
  rep.opt_witness = opt.witness;
  for (Mask b : partition.blocks) rep.block_opt.push_back(brute_force_opt(f, z, b).value);
  rep.gamma_empty = gamma_ratio(f, 0, z);
  rep.alpha = alpha_ratio(f);
  rep.gamma_min = gamma_min(f, partition, z);
  const double i = rep.blocks;
  rep.block_rhs = std::max(rep.alpha.value / i, rep.gamma_empty.value / z) * rep.opt;
  rep.selection_rhs = (1.0 - std::exp(-rep.gamma_min.value)) * rep.block_rhs;

  auto budget = [&](int size) {
    return static_cast<std::uint64_t>(
        std::ceil(params.iteration_scale * std::numbers::e * z * z * size * (1.0 + std::log(i))));
  };

  Mask winners = 0;
  SearchOutcome best{0, f(0), 0, std::nullopt};
  auto consider = [&](const SearchOutcome& s) {
    if (s.reached && !rep.iterations_to_threshold) rep.iterations_to_threshold = rep.iterations + *s.reached;
    rep.iterations += s.iterations;
    if (s.value > best.value) best = s;
  };
  for (std::size_t j = 0; j < partition.blocks.size(); ++j) {
    Rng stream = rng.fork(j);
    const Mask b = partition.blocks[j];
    const SearchOutcome s = archive_search(f, b, z, budget(popcount(b)), stream, rep.selection_rhs);
    rep.block_found.push_back(s.value);
    winners |= s.best;
    consider(s);
  }
  if (winners != 0) {
    Rng stream = rng.fork(partition.blocks.size());
    consider(archive_search(f, winners, z, budget(popcount(winners)), stream, rep.selection_rhs));
  }

  rep.achieved = best.value;
  rep.achieved_subset = best.best;
  const double block_best = *std::max_element(rep.block_opt.begin(), rep.block_opt.end());
  rep.block_holds = block_best >= rep.block_rhs - params.tolerance;
  rep.selection_holds = rep.achieved >= rep.selection_rhs - params.tolerance;
  return {best.best, rep};
}

std::string to_string(Family f) {
  switch (f) {
    case Family::modular: return "modular";
    case Family::coverage: return "coverage";
    case Family::facility: return "facility";
    case Family::complementary: return "complementary";
    case Family::nonmonotone: return "nonmonotone";
  }
  return "unknown";
}

Family parse_family(const std::string& text) {
  for (Family f : {Family::modular, Family::coverage, Family::facility, Family::complementary, Family::nonmonotone}) {
    if (to_string(f) == text) return f;
  }
  throw std::invalid_argument("unknown instance family '" + text + "'");
}

SetFunctionInstance generate(Family family, int n, Rng& rng) {
  if (n < 1 || n > kMaxGroundSet) throw std::invalid_argument("ground set size must lie in [1, 16]");
  const std::size_t count = std::size_t{1} << n;
  std::vector<double> values(count, 0.0);

  auto coverage_table = [&]() {
    const int universe = 2 * n;
    std::vector<double> weight(static_cast<std::size_t>(universe));
    for (double& w : weight) w = 0.1 + 0.9 * rng.uniform01();
    std::vector<std::uint64_t> covers(static_cast<std::size_t>(n), 0);
    for (auto& c : covers) {
      for (int e = 0; e < universe; ++e) {
        if (rng.bernoulli(0.25)) c |= std::uint64_t{1} << e;
      }
      if (c == 0) c = std::uint64_t{1} << rng.uniform_index(static_cast<std::uint64_t>(universe));
    }
    std::vector<double> table(count, 0.0);
    for (std::size_t s = 1; s < count; ++s) {
      std::uint64_t u = 0;
      for (int k = 0; k < n; ++k) {
        if (s & (std::size_t{1} << k)) u |= covers[static_cast<std::size_t>(k)];
      }
      for (int e = 0; e < universe; ++e) {
        if (u & (std::uint64_t{1} << e)) table[s] += weight[static_cast<std::size_t>(e)];
      }
    }
    return table;
  };

  switch (family) {
    case Family::modular: {
      std::vector<double> w(static_cast<std::size_t>(n));
      for (double& x : w) x = 0.1 + 0.9 * rng.uniform01();
      for (std::size_t s = 1; s < count; ++s) {
        for (int k = 0; k < n; ++k) {
          if (s & (std::size_t{1} << k)) values[s] += w[static_cast<std::size_t>(k)];
        }
      }
      return {n, values, true};
    }
    case Family::coverage:
      return {n, coverage_table(), true};
    case Family::facility: {
      std::vector<std::vector<double>> benefit(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
      for (auto& row : benefit) {
        for (double& b : row) b = rng.uniform01();
      }
      for (std::size_t s = 1; s < count; ++s) {
        for (const auto& row : benefit) {
          double m = 0.0;
          for (int k = 0; k < n; ++k) {
            if (s & (std::size_t{1} << k)) m = std::max(m, row[static_cast<std::size_t>(k)]);
          }
          values[s] += m;
        }
      }
      return {n, values, true};
    }
    case Family::complementary: {
      // coverage plus nonnegative pairwise bonuses: monotone but not submodular
      values = coverage_table();
      for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
          if (!rng.bernoulli(0.3)) continue;
          const double bonus = 0.5 * rng.uniform01();
          const std::size_t pair = (std::size_t{1} << a) | (std::size_t{1} << b);
          for (std::size_t s = 1; s < count; ++s) {
            if ((s & pair) == pair) values[s] += bonus;
          }
        }
      }
      return {n, values, true};
    }
    case Family::nonmonotone: {
      values = coverage_table();
      for (std::size_t s = 1; s < count; ++s) values[s] -= 0.8 * std::popcount(s);
      return {n, values, false};
    }
  }
  throw std::invalid_argument("unknown instance family");
}

InstanceFile read_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open instance file " + path);
  nlohmann::json j;
  try {
    in >> j;
    return {SetFunctionInstance(j.at("n").get<int>(), j.at("values").get<std::vector<double>>(),
                                j.value("monotone", false)),
            j.at("z").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed instance file " + path + ": " + e.what());
  }
}

void write_instance(const std::string& path, const SetFunctionInstance& f, int z) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write instance file " + path);
  nlohmann::json j{{"n", f.size()}, {"z", z}, {"monotone", f.monotone()}, {"values", f.values()}};
  out << j.dump() << '\n';
}

std::string to_json(const BoundReport& r) {
  nlohmann::json j{{"n", r.n},
                   {"z", r.z},
                   {"blocks", r.blocks},
                   {"opt", r.opt},
                   {"opt_witness", members(r.opt_witness)},
                   {"block_opt", r.block_opt},
                   {"block_found", r.block_found},
                   {"gamma_empty_z", ratio_json(r.gamma_empty)},
                   {"alpha", ratio_json(r.alpha)},
                   {"gamma_min", ratio_json(r.gamma_min)},
                   {"achieved", r.achieved},
                   {"achieved_subset", members(r.achieved_subset)},
                   {"block_rhs", r.block_rhs},
                   {"selection_rhs", r.selection_rhs},
                   {"block_holds", r.block_holds},
                   {"selection_holds", r.selection_holds},
                   {"iterations", r.iterations}};
  j["iterations_to_threshold"] = r.iterations_to_threshold ? nlohmann::json(*r.iterations_to_threshold) : nlohmann::json();
  return j.dump();
}

}  // namespace garsdc::subsetsel
