#pragma once

#include <cstddef>
#include <functional>

#include "tqd/tensor.hpp"

namespace tqd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

/// Compares the tape gradient of a scalar function against central
/// differences, one coordinate at a time. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
/// coordinates whose true gradient is zero from dividing noise by noise.
///
/// `f` must rebuild its graph from `x` on every call. `x` must be a
/// requires-grad leaf; its values are perturbed in place and restored.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           Tensor x, double eps = 1e-5, double tol = 1e-5,
                           double floor = 1e-6);

}  // namespace tqd
