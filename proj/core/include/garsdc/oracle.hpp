#pragma once

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "garsdc/detection.hpp"
#include "garsdc/image.hpp"

namespace garsdc {

class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted() : std::runtime_error("query budget exhausted") {}
};

class OracleUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Unsupported : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A detector seen as a black box. Implementations must be safe to call
/// concurrently.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual std::vector<Detection> detect(const ImageTensor& image) const = 0;
  virtual int class_count() const = 0;

  /// Gradient of sum_i log c_i[argmax] over the detections of `image`, with
  /// respect to every pixel. Black-box detectors throw Unsupported.
  virtual ImageTensor objective_gradient(const ImageTensor& image) const;
};

/// Free-function form; throws Unsupported for black-box detectors.
inline ImageTensor gradient(const Detector& surrogate, const ImageTensor& image) {
  return surrogate.objective_gradient(image);
}

/// Linearizable query counter. A budget may draw on a parent so a sub-search
/// can be handed a fixed allotment of the parent's remaining queries.
class QueryBudget {
 public:
  explicit QueryBudget(std::uint64_t limit = 4000, QueryBudget* parent = nullptr);

  QueryBudget(const QueryBudget&) = delete;
  QueryBudget& operator=(const QueryBudget&) = delete;

  /// Takes one query; false when this budget or its parent is spent.
  bool try_acquire();

  std::uint64_t used() const { return used_.load(std::memory_order_acquire); }
  std::uint64_t limit() const { return limit_; }
  std::uint64_t remaining() const;
  bool exhausted() const { return remaining() == 0; }

 private:
  std::atomic<std::uint64_t> used_{0};
  std::uint64_t limit_;
  QueryBudget* parent_;
};

/// Detector plus the budget every query is charged to. A query is charged
/// before the detector runs, so failed or empty responses still count.
class QueryOracle {
 public:
  QueryOracle(const Detector& detector, QueryBudget& budget) : detector_(&detector), budget_(&budget) {}

  /// Throws BudgetExhausted before charging when nothing is left.
  std::vector<Detection> detect(const ImageTensor& image) const;

  /// detect(clamp(image + delta, 0, 1)).
  std::vector<Detection> detect_clipped(const ImageTensor& image, const Perturbation& delta) const;

  const Detector& detector() const { return *detector_; }
  QueryBudget& budget() const { return *budget_; }

 private:
  const Detector* detector_;
  QueryBudget* budget_;
};

}  // namespace garsdc
