#include <bit>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "garsdc/subsetsel.hpp"
#include "garsdc/theory.hpp"
#include "json.hpp"

using namespace garsdc;
using namespace garsdc::subsetsel;

namespace {

SetFunctionInstance cardinality(int n) {
  std::vector<double> v(std::size_t{1} << n);
  for (std::size_t s = 0; s < v.size(); ++s) v[s] = std::popcount(s);
  return {n, v, true};
}

/// f({0,1}) jumps: one strictly supermodular pair on three elements.
SetFunctionInstance supermodular3() { return {3, {0, 1, 1, 3, 1, 2, 2, 4}, true}; }

/// Unit-weight coverage: element k covers {k, k+1 mod 4} of a 4-point universe.
SetFunctionInstance ring_coverage() {
  std::vector<double> v(16);
  for (Mask s = 0; s < 16; ++s) {
    unsigned covered = 0;
    for (int k = 0; k < 4; ++k) {
      if (s & (1u << k)) covered |= (1u << k) | (1u << ((k + 1) % 4));
    }
    v[s] = std::popcount(covered);
  }
  return {4, v, true};
}

double exhaustive_max(const SetFunctionInstance& f, int z, Mask pool) {
  double best = 0.0;
  for (Mask s = 0; s <= f.ground(); ++s) {
    if ((s & ~pool) == 0 && std::popcount(s) <= z) best = std::max(best, f(s));
  }
  return best;
}

/// Independent enumeration of the gamma ratio over all (L, M) pairs.
double exhaustive_gamma(const SetFunctionInstance& f, Mask u, int l) {
  double best = std::numeric_limits<double>::infinity();
  for (Mask L = 0; L <= f.ground(); ++L) {
    if ((L & ~u) != 0) continue;
    for (Mask M = 1; M <= f.ground(); ++M) {
      if ((M & L) != 0 || std::popcount(M) > l) continue;
      const double den = f(L | M) - f(L);
      if (std::abs(den) <= 1e-12) continue;
      double num = 0.0;
      for (int v = 0; v < f.size(); ++v) {
        if (M & (1u << v)) num += f(L | (1u << v)) - f(L);
      }
      best = std::min(best, num / den);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("instances are normalized and validated") {
  const SetFunctionInstance f(2, {5, 6, 7, 9}, true);
  CHECK(f(0) == 0.0);
  CHECK(f(3) == 4.0);
  CHECK_THROWS_AS(SetFunctionInstance(2, {0, 1, 2}, false), std::invalid_argument);
  CHECK_THROWS_AS(SetFunctionInstance(17, {}, false), std::invalid_argument);
  CHECK_THROWS_AS(SetFunctionInstance(1, {0, NAN}, false), std::invalid_argument);
  CHECK_THROWS_AS(SetFunctionInstance(2, {0, 2, 1, 1}, true), std::invalid_argument);
  CHECK_NOTHROW(SetFunctionInstance(2, {0, 2, 1, 1}, false));
  CHECK_FALSE(is_monotone(SetFunctionInstance(2, {0, 2, 1, 1}, false)));
  CHECK(is_monotone(ring_coverage()));
}

TEST_CASE("partitions") {
  CHECK_NOTHROW(validate(PartitionScheme{{0b0011, 0b1100}}, 4));
  CHECK_THROWS_AS(validate(PartitionScheme{{0b0011, 0b0110}}, 3), std::invalid_argument);
  CHECK_THROWS_AS(validate(PartitionScheme{{0b0011}}, 3), std::invalid_argument);
  CHECK_THROWS_AS(validate(PartitionScheme{{0b0011, 0}}, 2), std::invalid_argument);
  CHECK_THROWS_AS(validate(PartitionScheme{{0b1111}}, 3), std::invalid_argument);
  Rng rng(1);
  for (int n = 1; n <= 12; ++n) {
    for (int i = 1; i <= n; ++i) {
      const auto p = even_partition(n, i, rng);
      CHECK_NOTHROW(validate(p, n));
      REQUIRE(p.blocks.size() == static_cast<std::size_t>(i));
      int lo = n, hi = 0;
      for (Mask b : p.blocks) {
        lo = std::min(lo, std::popcount(b));
        hi = std::max(hi, std::popcount(b));
      }
      CHECK(hi - lo <= 1);
    }
  }
  CHECK_THROWS_AS(even_partition(3, 4, rng), std::invalid_argument);
}

TEST_CASE("brute-force optimum examples") {
  CHECK(brute_force_opt(cardinality(5), 3).value == 3.0);
  const SetFunctionInstance zero(4, std::vector<double>(16, 0.0), true);
  const auto z = brute_force_opt(zero, 2);
  CHECK(z.value == 0.0);
  CHECK(z.witness == 0);
  Rng rng(2);
  const auto cov = generate(Family::coverage, 8, rng);
  const auto opt = brute_force_opt(cov, 3);
  CHECK(opt.value == exhaustive_max(cov, 3, cov.ground()));
  CHECK(std::popcount(opt.witness) <= 3);
  CHECK(cov(opt.witness) == opt.value);
  const auto inside = brute_force_opt(cov, 3, Mask{0b00001111});
  CHECK(inside.value == exhaustive_max(cov, 3, 0b00001111));
  CHECK((inside.witness & ~Mask{0b00001111}) == 0);
}

TEST_CASE("ratios of modular functions are one") {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto f = generate(Family::modular, 2 + static_cast<int>(rng.uniform_index(7)), rng);
    const auto g = gamma_ratio(f, 0, 1 + static_cast<int>(rng.uniform_index(4)));
    CHECK(g.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(g.degenerate);
    CHECK(alpha_ratio(f).value == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gamma of a submodular coverage function is one") {
  const auto f = ring_coverage();
  for (int l = 1; l <= 4; ++l) {
    CHECK(gamma_ratio(f, f.ground(), l).value == doctest::Approx(exhaustive_gamma(f, f.ground(), l)));
    CHECK(gamma_ratio(f, f.ground(), l).value == doctest::Approx(1.0));
  }
  // element 0 joins {1} with gain 1 but joins {} with gain 2
  const auto a = alpha_ratio(f);
  CHECK(a.value == doctest::Approx(1.0));
}

TEST_CASE("one supermodular pair pushes gamma below one") {
  const auto f = supermodular3();
  CHECK(gamma_ratio(f, 0, 2).value == doctest::Approx(2.0 / 3.0));
  CHECK(gamma_ratio(f, f.ground(), 2).value == doctest::Approx(2.0 / 3.0));
  CHECK(gamma_ratio(f, 0, 1).value == doctest::Approx(1.0));
  CHECK(alpha_ratio(f).value == doctest::Approx(0.5));
}

TEST_CASE("gamma agrees with independent enumeration on random instances") {
  Rng rng(4);
  for (Family fam : {Family::coverage, Family::facility, Family::complementary}) {
    for (int k = 0; k < 5; ++k) {
      const auto f = generate(fam, 5, rng);
      const Mask u = static_cast<Mask>(rng.uniform_index(32));
      const int l = 1 + static_cast<int>(rng.uniform_index(4));
      CHECK(gamma_ratio(f, u, l).value == doctest::Approx(exhaustive_gamma(f, u, l)).epsilon(1e-12));
    }
  }
}

TEST_CASE("degenerate ratios report one with a flag") {
  const SetFunctionInstance zero(3, std::vector<double>(8, 0.0), true);
  const auto g = gamma_ratio(zero, 0, 2);
  CHECK(g.value == 1.0);
  CHECK(g.degenerate);
  CHECK(alpha_ratio(zero).degenerate);
  CHECK(gamma_min(zero, PartitionScheme{{0b111}}, 2).degenerate);
}

TEST_CASE("ratio enumeration refuses large ground sets") {
  const auto f = cardinality(13);
  CHECK_THROWS_AS(gamma_ratio(f, 0, 2), Refused);
  CHECK_THROWS_AS(alpha_ratio(f), Refused);
  CHECK(brute_force_opt(f, 2).value == 2.0);
}

TEST_CASE("archive search respects the size budget") {
  Rng rng(5);
  for (int k = 0; k < 30; ++k) {
    const auto f = generate(Family::complementary, 8, rng);
    const int z = 1 + static_cast<int>(rng.uniform_index(4));
    const Mask within = static_cast<Mask>(1 + rng.uniform_index(255));
    const auto s = archive_search(f, within, z, 500, rng);
    CHECK(std::popcount(s.best) <= z);
    CHECK((s.best & ~within) == 0);
    CHECK(s.value == f(s.best));
    CHECK(s.value <= exhaustive_max(f, z, within) + 1e-12);
  }
}

TEST_CASE("one block on a modular function finds the optimum") {
  Rng rng(6);
  for (int k = 0; k < 10; ++k) {
    const auto f = generate(Family::modular, 8, rng);
    const auto r = dc_subset_select(f, PartitionScheme{{f.ground()}}, 3, SubsetGAParams{}, rng);
    CHECK(r.report.achieved == doctest::Approx(r.report.opt).epsilon(1e-12));
    CHECK(r.report.holds());
  }
}

TEST_CASE("both bounds hold on a seeded coverage instance") {
  Rng rng(7);
  const auto f = generate(Family::coverage, 8, rng);
  const auto p = even_partition(8, 2, rng);
  const auto r = dc_subset_select(f, p, 3, SubsetGAParams{}, rng);
  CHECK(r.report.opt == exhaustive_max(f, 3, f.ground()));
  CHECK(r.report.block_holds);
  CHECK(r.report.selection_holds);
  CHECK(std::popcount(r.subset) <= 3);
  CHECK(r.subset == r.report.achieved_subset);
  CHECK(f(r.subset) == r.report.achieved);
}

TEST_CASE("block bound holds on 100 random monotone instances") {
  Rng rng(8);
  const Family fams[] = {Family::modular, Family::coverage, Family::facility, Family::complementary};
  for (int k = 0; k < 100; ++k) {
    const int n = 3 + static_cast<int>(rng.uniform_index(6));
    const auto f = generate(fams[k % 4], n, rng);
    const int z = 1 + static_cast<int>(rng.uniform_index(4));
    const int i = std::min(n, 1 << rng.uniform_index(3));
    const auto r = dc_subset_select(f, even_partition(n, i, rng), z, SubsetGAParams{}, rng);
    const auto& rep = r.report;
    CAPTURE(to_json(rep));
    CHECK(rep.block_holds);
    CHECK(rep.selection_holds);
    CHECK(std::popcount(r.subset) <= z);
    for (double b : rep.block_opt) CHECK(rep.opt >= b);
    CHECK(rep.achieved <= rep.opt + 1e-12);
    CHECK(std::isfinite(rep.block_rhs));
    CHECK(std::isfinite(rep.selection_rhs));
  }
}

TEST_CASE("selection refuses non-monotone input and bad budgets") {
  Rng rng(9);
  const auto bad = generate(Family::nonmonotone, 6, rng);
  CHECK_FALSE(bad.monotone());
  CHECK_THROWS_AS(dc_subset_select(bad, PartitionScheme{{bad.ground()}}, 2, SubsetGAParams{}, rng), Refused);
  const auto f = cardinality(4);
  CHECK_THROWS_AS(dc_subset_select(f, PartitionScheme{{f.ground()}}, 0, SubsetGAParams{}, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(dc_subset_select(f, PartitionScheme{{0b0011}}, 2, SubsetGAParams{}, rng), std::invalid_argument);
}

TEST_CASE("selection is deterministic for a seed") {
  Rng a(10), b(10);
  const auto f = generate(Family::complementary, 8, a);
  const auto g = generate(Family::complementary, 8, b);
  const auto pa = even_partition(8, 4, a);
  const auto pb = even_partition(8, 4, b);
  CHECK(to_json(dc_subset_select(f, pa, 3, {}, a).report) == to_json(dc_subset_select(g, pb, 3, {}, b).report));
}

TEST_CASE("generated families keep their promises") {
  Rng rng(11);
  for (Family fam : {Family::modular, Family::coverage, Family::facility, Family::complementary}) {
    CHECK(parse_family(to_string(fam)) == fam);
    for (int k = 0; k < 5; ++k) CHECK(is_monotone(generate(fam, 6, rng)));
  }
  int nonmonotone = 0;
  for (int k = 0; k < 5; ++k) nonmonotone += !is_monotone(generate(Family::nonmonotone, 6, rng));
  CHECK(nonmonotone > 0);
  int below_one = 0;
  for (int k = 0; k < 10; ++k) below_one += gamma_ratio(generate(Family::complementary, 6, rng), 0, 3).value < 1.0;
  CHECK(below_one > 0);
  CHECK_THROWS_AS(parse_family("random"), std::invalid_argument);
}

TEST_CASE("instance files round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "garsdc_instance.json").string();
  Rng rng(12);
  const auto f = generate(Family::facility, 5, rng);
  write_instance(path, f, 2);
  const auto back = read_instance(path);
  CHECK(back.z == 2);
  CHECK(back.f.size() == 5);
  CHECK(back.f.monotone());
  CHECK(back.f.values() == f.values());
  CHECK_THROWS_AS(read_instance(path + ".missing"), std::runtime_error);
}

TEST_CASE("theory grid runs clean on a small grid") {
  TheoryGrid grid;
  grid.n = {3, 5};
  grid.z = {1, 2};
  grid.blocks = {1, 4};
  grid.seeds = {1};
  const auto r = run_theory(grid);
  CHECK(r.violations == 0);
  CHECK(r.skipped == 4 * 2);  // n = 3 cannot be split into 4 blocks
  CHECK(r.checked + r.skipped + r.refused == r.cells.size());
  CHECK(r.checked == 24);
  for (const auto& c : r.cells) {
    if (c.status == CellStatus::checked) {
      REQUIRE(c.report);
      CHECK(c.report->holds());
      const auto j = nlohmann::json::parse(cell_json(c));
      CHECK(j.contains("n"));
    }
  }
  grid.families = {Family::nonmonotone};
  grid.blocks = {1};
  const auto refused = run_theory(grid);
  CHECK(refused.refused == refused.cells.size());
  CHECK(refused.violations == 0);
}

TEST_CASE("cell instances are deterministic") {
  CHECK(cell_instance(6, Family::coverage, 3).values() == cell_instance(6, Family::coverage, 3).values());
  CHECK(cell_instance(6, Family::coverage, 3).values() != cell_instance(6, Family::coverage, 4).values());
}
