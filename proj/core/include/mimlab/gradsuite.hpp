#pragma once

#include <string>
#include <vector>

#include "mimlab/gradcheck.hpp"

namespace mimlab {

struct OpGradReport {
  std::string op;
  double max_rel_err = 0;
  double tol = 0;
  bool passed = false;
};

// Finite-difference verification of every differentiable operation plus one
// full split-pipeline step on a two-image batch, all in f64 with h = 1e-5.
// Linear operations are held to 1e-6, the rest to 1e-4.
std::vector<OpGradReport> gradient_suite(uint64_t seed = 12345);

}  // namespace mimlab
