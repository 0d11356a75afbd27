#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "garsdc/subsetsel.hpp"

namespace garsdc {

struct TheoryGrid {
  std::vector<int> n{4, 6, 8, 10};
  std::vector<int> z{1, 2, 3, 4};
  std::vector<int> blocks{1, 2, 4};
  std::vector<subsetsel::Family> families{subsetsel::Family::modular, subsetsel::Family::coverage,
                                          subsetsel::Family::facility, subsetsel::Family::complementary};
  std::vector<std::uint64_t> seeds{1, 2};
  subsetsel::SubsetGAParams ga;
};

enum class CellStatus { checked, refused, skipped };

struct TheoryCell {
  int n = 0;
  int z = 0;
  int blocks = 0;
  subsetsel::Family family = subsetsel::Family::modular;
  std::uint64_t seed = 0;
  CellStatus status = CellStatus::checked;
  std::string notice;
  std::optional<subsetsel::BoundReport> report;
};

struct TheoryResult {
  std::vector<TheoryCell> cells;
  std::size_t checked = 0;
  std::size_t violations = 0;
  std::size_t refused = 0;
  std::size_t skipped = 0;
};

/// Deterministic instance for one grid cell.
subsetsel::SetFunctionInstance cell_instance(int n, subsetsel::Family family, std::uint64_t seed);

/// One report per cell. Cells with more blocks than elements or n beyond
/// the ratio enumeration limit are skipped with a notice; non-monotone
/// instances are refused.
TheoryResult run_theory(const TheoryGrid& grid);

/// Iterations until the achieved value first met the selection bound,
/// divided by z^2 * n * (1 + ln i). Empty when the bound was never met
/// before the budget ran out (it can still hold via the merge round).
std::optional<double> complexity_ratio(const subsetsel::BoundReport& r);

std::string cell_json(const TheoryCell& cell);

}  // namespace garsdc
