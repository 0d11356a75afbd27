#include "garsdc/initpop.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace garsdc {

SmoothingKernel SmoothingKernel::uniform(int size) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("kernel size must be odd and positive");
  const auto n = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  return {size, std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

SmoothingKernel SmoothingKernel::gaussian(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("kernel size must be odd and positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  SmoothingKernel k{size, std::vector<double>(static_cast<std::size_t>(size * size))};
  const int half = size / 2;
  double sum = 0.0;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k.weights[static_cast<std::size_t>((dy + half) * size + (dx + half))] = w;
      sum += w;
    }
  }
  for (double& w : k.weights) w /= sum;
  return k;
}

void validate(const SmoothingKernel& kernel) {
  if (kernel.size < 1 || kernel.size % 2 == 0) throw std::invalid_argument("kernel size must be odd and positive");
  if (kernel.weights.size() != static_cast<std::size_t>(kernel.size * kernel.size)) {
    throw std::invalid_argument("kernel weight count does not match its size");
  }
  double sum = 0.0;
  for (double w : kernel.weights) {
    if (w < 0.0) throw std::invalid_argument("kernel weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("kernel weights must sum to 1");
}

double cross_entropy_objective(std::span<const Detection> dets) {
  double total = 0.0;
  for (const Detection& d : dets) {
    const int k = d.predicted_class();
    if (k < 0) continue;
    total += std::log(std::max(d.probs[static_cast<std::size_t>(k)], 1e-12));
  }
  return total;
}

ImageTensor smooth(const ImageTensor& field, const SmoothingKernel& kernel) {
  validate(kernel);
  if (kernel.size == 1) return field;
  ImageTensor out(field.width, field.height, field.channels, 0.0);
  const int half = kernel.size / 2;
  for (int y = 0; y < field.height; ++y) {
    for (int x = 0; x < field.width; ++x) {
      for (int ch = 0; ch < field.channels; ++ch) {
        double acc = 0.0;
        for (int dy = -half; dy <= half; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= field.height) continue;
          for (int dx = -half; dx <= half; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= field.width) continue;
            acc += kernel.at(dx + half, dy + half) * field.at(xx, yy, ch);
          }
        }
        out.at(x, y, ch) = acc;
      }
    }
  }
  return out;
}

Perturbation smoothed_sign(const ImageTensor& field, const SmoothingKernel& kernel, double epsilon) {
  const ImageTensor s = smooth(field, kernel);
  Perturbation delta(field.width, field.height, field.channels, epsilon);
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    const double v = s.data[i];
    delta.data[i] = v > 0.0 ? epsilon : (v < 0.0 ? -epsilon : 0.0);
  }
  return delta;
}

Perturbation ti_sign_step(const Detector& surrogate, const ImageTensor& x, const Perturbation& delta,
                          const SmoothingKernel& kernel, MomentumState* momentum) {
  ImageTensor g = gradient(surrogate, apply_perturbation(x, delta));
  // ascend the loss, which is the negated log-likelihood
  for (double& v : g.data) v = -v;
  if (momentum == nullptr) return smoothed_sign(g, kernel, delta.epsilon);

  double l1 = 0.0;
  for (double v : g.data) l1 += std::abs(v);
  if (!momentum->accumulated) momentum->accumulated = ImageTensor(g.width, g.height, g.channels, 0.0);
  ImageTensor& m = *momentum->accumulated;
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    m.data[i] = momentum->mu * m.data[i] + (l1 > 0.0 ? g.data[i] / l1 : 0.0);
  }
  return smoothed_sign(m, kernel, delta.epsilon);
}

namespace {

Perturbation run_branch(const ImageTensor& x, const Detector& surrogate, const InitOptions& options) {
  Perturbation delta = Perturbation::zeros_like(x, options.epsilon);
  MomentumState state{options.momentum_decay, std::nullopt};
  for (int t = 0; t < options.iterations; ++t) {
    delta = ti_sign_step(surrogate, x, delta, options.kernel, options.momentum ? &state : nullptr);
  }
  return delta;
}

}  // namespace

std::pair<Perturbation, Perturbation> build_mixed_population(const ImageTensor& x, const Detector& skip_surrogate,
                                                             const Detector& chain_surrogate,
                                                             const InitOptions& options) {
  if (options.iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  return {run_branch(x, skip_surrogate, options), run_branch(x, chain_surrogate, options)};
}

Perturbation random_sign_perturbation(const ImageTensor& x, double epsilon, Rng& rng) {
  Perturbation delta = Perturbation::zeros_like(x, epsilon);
  for (double& v : delta.data) v = epsilon * rng.sign();
  return delta;
}

}  // namespace garsdc
