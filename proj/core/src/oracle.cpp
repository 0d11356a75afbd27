#include "garsdc/oracle.hpp"

#include <algorithm>
#include <stdexcept>

namespace garsdc {

ImageTensor Detector::objective_gradient(const ImageTensor&) const {
  throw Unsupported("detector does not expose gradients");
}

QueryBudget::QueryBudget(std::uint64_t limit, QueryBudget* parent) : limit_(limit), parent_(parent) {}

bool QueryBudget::try_acquire() {
  std::uint64_t current = used_.load(std::memory_order_relaxed);
  do {
    if (current >= limit_) return false;
  } while (!used_.compare_exchange_weak(current, current + 1, std::memory_order_acq_rel));
  if (parent_ != nullptr && !parent_->try_acquire()) {
    used_.fetch_sub(1, std::memory_order_acq_rel);
    return false;
  }
  return true;
}

std::uint64_t QueryBudget::remaining() const {
  const std::uint64_t u = used();
  std::uint64_t left = u >= limit_ ? 0 : limit_ - u;
  if (parent_ != nullptr) left = std::min(left, parent_->remaining());
  return left;
}

std::vector<Detection> QueryOracle::detect(const ImageTensor& image) const {
  if (!budget_->try_acquire()) throw BudgetExhausted();
  return detector_->detect(image);
}

std::vector<Detection> QueryOracle::detect_clipped(const ImageTensor& image, const Perturbation& delta) const {
  if (!delta.fits(image)) throw std::invalid_argument("perturbation shape does not match image");
  // Reused per thread: a fresh image per query makes the allocator churn pages.
  thread_local ImageTensor scratch;
  scratch.width = image.width;
  scratch.height = image.height;
  scratch.channels = image.channels;
  scratch.data.resize(image.data.size());
  for (std::size_t i = 0; i < scratch.data.size(); ++i) {
    scratch.data[i] = std::clamp(image.data[i] + delta.data[i], 0.0, 1.0);
  }
  return detect(scratch);
}

}  // namespace garsdc
