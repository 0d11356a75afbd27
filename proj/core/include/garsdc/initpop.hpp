#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "garsdc/image.hpp"
#include "garsdc/oracle.hpp"
#include "garsdc/rng.hpp"

namespace garsdc {

/// Square smoothing kernel, odd side, non-negative weights summing to 1.
struct SmoothingKernel {
  int size = 1;
  std::vector<double> weights{1.0};

  static SmoothingKernel identity() { return {}; }
  static SmoothingKernel uniform(int size);
  static SmoothingKernel gaussian(int size = 5, double sigma = 1.5);

  double at(int dx, int dy) const { return weights[static_cast<std::size_t>(dy * size + dx)]; }
};

void validate(const SmoothingKernel& kernel);

/// sum_i log(c_i[k_i]) over detections, k_i the predicted class; each
/// probability is floored at 1e-12 before the log.
double cross_entropy_objective(std::span<const Detection> dets);

/// 2-D convolution of every channel plane with zero ("same") padding.
ImageTensor smooth(const ImageTensor& field, const SmoothingKernel& kernel);

/// epsilon * sign(kernel * field), with sign(0) = 0.
Perturbation smoothed_sign(const ImageTensor& field, const SmoothingKernel& kernel, double epsilon);

/// Momentum accumulator for the M-TIFGSM variant: m <- mu * m + g / ||g||_1.
struct MomentumState {
  double mu = 1.0;
  std::optional<ImageTensor> accumulated;
};

/// One kernel-smoothed sign step against a differentiable surrogate.
///
/// g is the gradient of the cross-entropy loss, i.e. -grad(sum log c), at
/// clamp(x + delta). The result replaces delta outright:
///   delta' = epsilon * sign(kernel * g)        (no momentum)
///   delta' = epsilon * sign(kernel * m)        (momentum, m accumulated first)
/// Throws Unsupported when the surrogate has no gradient.
Perturbation ti_sign_step(const Detector& surrogate, const ImageTensor& x, const Perturbation& delta,
                          const SmoothingKernel& kernel, MomentumState* momentum = nullptr);

struct InitOptions {
  int iterations = 20;
  double epsilon = 0.05;
  SmoothingKernel kernel = SmoothingKernel::gaussian(5, 1.5);
  bool momentum = false;
  double momentum_decay = 1.0;
};

/// Runs `iterations` sign steps from zero on each surrogate independently;
/// first member from `skip_surrogate`, second from `chain_surrogate`.
std::pair<Perturbation, Perturbation> build_mixed_population(const ImageTensor& x, const Detector& skip_surrogate,
                                                             const Detector& chain_surrogate,
                                                             const InitOptions& options = {});

/// Every entry independently +epsilon or -epsilon.
Perturbation random_sign_perturbation(const ImageTensor& x, double epsilon, Rng& rng);

}  // namespace garsdc
