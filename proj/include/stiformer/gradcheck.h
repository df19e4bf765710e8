#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "stiformer/tensor.h"

namespace stif {

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t param_count = 0;
};

// Relative error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, floor).
// The floor keeps coordinates whose true gradient is ~0 from dominating
// through finite-difference round-off.
inline constexpr double kGradCheckRelFloor = 1e-6;

/// Compares backward() on f at x against central differences
/// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. f must return a scalar.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5);

/// Same comparison over every coordinate of a set of leaf parameters that
/// the closure reads. Parameter values are restored afterwards.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  double h = 1e-5);

}  // namespace stif
