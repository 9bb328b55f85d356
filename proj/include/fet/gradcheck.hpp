#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fet/autodiff.hpp"

namespace fet {

struct GradCheckOptions {
  double h = 1e-5;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  // When > 0, samples ceil(fraction * size) coordinates of each parameter instead.
  double sample_fraction = 0.0;
  std::uint64_t seed = 0;
  // One-sided slopes disagreeing by more than this (relative) mark a kink.
  double kink_tol = 1e-2;
  // Difference-quotient roundoff is taken as noise_factor * eps * (|f| + 1) / h.
  // Deep losses accumulate more roundoff per evaluation and need a larger factor.
  double noise_factor = 100.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates where the function is locally non-differentiable (e.g. ReLU at 0).
  std::size_t kinks_skipped = 0;
  // Coordinates whose analytic and numeric slopes are both within difference noise of zero.
  std::size_t below_noise = 0;
  std::string worst;  // "param[index]" of the worst coordinate
};

/// Compares tape gradients against central differences
///   |analytic - numeric| / (|analytic| + |numeric| + 1e-12)
/// over (sampled) coordinates of `params`. `f` must build a scalar on the
/// tape it is given, binding each param via Tape::param.
GradCheckResult grad_check(const std::function<Var(Tape&)>& f, const std::vector<Tensor*>& params,
                           const GradCheckOptions& opt = {});

}  // namespace fet
