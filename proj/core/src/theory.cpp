#include "garsdc/theory.hpp"

#include <cmath>

#include "json.hpp"

namespace garsdc {

using namespace subsetsel;

SetFunctionInstance cell_instance(int n, Family family, std::uint64_t seed) {
  Rng rng(splitmix64(seed) ^ (static_cast<std::uint64_t>(n) << 8) ^ (static_cast<std::uint64_t>(family) << 16));
  return generate(family, n, rng);
}

TheoryResult run_theory(const TheoryGrid& grid) {
  TheoryResult out;
  for (Family family : grid.families) {
    for (int n : grid.n) {
      for (int z : grid.z) {
        for (int i : grid.blocks) {
          for (std::uint64_t seed : grid.seeds) {
            TheoryCell cell{n, z, i, family, seed, CellStatus::checked, {}, std::nullopt};
            if (n > kMaxRatioGroundSet || n < 1) {
              cell.status = CellStatus::skipped;
              cell.notice = "n outside the tractable range [1, 12]";
            } else if (i > n || z < 1 || i < 1) {
              cell.status = CellStatus::skipped;
              cell.notice = "need 1 <= i <= n and z >= 1";
            } else {
              try {
                const SetFunctionInstance f = cell_instance(n, family, seed);
                Rng rng(splitmix64(seed ^ 0x7E57) ^ (static_cast<std::uint64_t>(z) << 4) ^
                        (static_cast<std::uint64_t>(i) << 12) ^ static_cast<std::uint64_t>(n));
                const PartitionScheme p = even_partition(n, i, rng);
                cell.report = dc_subset_select(f, p, z, grid.ga, rng).report;
              } catch (const Refused& e) {
                cell.status = CellStatus::refused;
                cell.notice = e.what();
              }
            }
            switch (cell.status) {
              case CellStatus::checked:
                ++out.checked;
                if (!cell.report->holds()) ++out.violations;
                break;
              case CellStatus::refused: ++out.refused; break;
              case CellStatus::skipped: ++out.skipped; break;
            }
            out.cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  return out;
}

std::optional<double> complexity_ratio(const BoundReport& r) {
  if (!r.iterations_to_threshold) return std::nullopt;
  const double scale = static_cast<double>(r.z) * r.z * r.n * (1.0 + std::log(static_cast<double>(r.blocks)));
  return static_cast<double>(*r.iterations_to_threshold) / scale;
}

std::string cell_json(const TheoryCell& cell) {
  nlohmann::json j{{"n", cell.n}, {"z", cell.z}, {"blocks", cell.blocks}, {"family", to_string(cell.family)},
                   {"seed", cell.seed}};
  switch (cell.status) {
    case CellStatus::checked: j["status"] = "checked"; break;
    case CellStatus::refused: j["status"] = "refused"; break;
    case CellStatus::skipped: j["status"] = "skipped"; break;
  }
  if (!cell.notice.empty()) j["notice"] = cell.notice;
  if (cell.report) {
    j["report"] = nlohmann::json::parse(to_json(*cell.report));
    const auto ratio = complexity_ratio(*cell.report);
    j["complexity_ratio"] = ratio ? nlohmann::json(*ratio) : nlohmann::json();
  }
  return j.dump();
}

}  // namespace garsdc
