#pragma once

// Central finite-difference gradient check against the analytic backward.

#include <algorithm>
#include <cmath>

#include "textrec/encoder.hpp"
#include "textrec/rng.hpp"

namespace textrec::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline GradCheckResult gradient_check(Parameters& params, const BatchInputs& inputs, int samples,
                                      std::uint64_t seed, double step) {
  const LossForward fwd = forward_loss(params, inputs);
  const Gradients grads = backward(params, fwd);
  auto param_views = params.tensor_views();
  const auto grad_views = grads.tensor_views();

  GradCheckResult result;
  Rng rng(seed);
  for (int s = 0; s < samples; ++s) {
    const std::size_t tensor = static_cast<std::size_t>(rng.uniform_below(param_views.size()));
    const std::int64_t index = static_cast<std::int64_t>(
        rng.uniform_below(static_cast<std::uint64_t>(param_views[tensor].size())));
    double& coordinate = param_views[tensor].data[index];
    const double saved = coordinate;
    coordinate = saved + step;
    const double loss_plus = forward_loss(params, inputs).loss;
    coordinate = saved - step;
    const double loss_minus = forward_loss(params, inputs).loss;
    coordinate = saved;
    const double fd = (loss_plus - loss_minus) / (2.0 * step);
    const double analytic = grad_views[tensor].data[index];
    const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
    result.max_rel_err = std::max(result.max_rel_err, std::abs(fd - analytic) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace textrec::testing
