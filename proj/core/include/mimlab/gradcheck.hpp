#pragma once

#include <functional>
#include <span>
#include <string>

#include "mimlab/tape.hpp"

namespace mimlab {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // coordinate where the largest error occurred
  bool passed = false;
};

// Compares reverse-mode gradients of a scalar-valued builder against central
// finite differences. `f` must rebuild its graph from the given leaves on
// every call; leaves are perturbed in place through their shared buffers, so
// they must be f64 with requires_grad set. Relative error per coordinate is
// |a - n| / max(|a|, |n|, 1e-3).
GradCheckReport grad_check(const std::function<Tensor(Tape*)>& f, std::span<Tensor> leaves,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace mimlab
