#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mimlab/rng.hpp"

namespace mimlab {

// Partition of a patch grid into observed and masked positions.
struct MaskPlan {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> masked;  // 1 = masked, grid row-major

  int64_t n() const { return static_cast<int64_t>(masked.size()); }
  int64_t masked_count() const;
};

// Grid-proportional block bounds: min = max(1, floor(16 n / 196)),
// max = max(min, floor(75 n / 196)).
std::pair<int64_t, int64_t> scaled_block_bounds(int64_t n);

// Rectangular blocks (area uniform in [min_block, max_block], aspect ratio
// log-uniform in [0.3, 1/0.3], placement uniform with overhang then clipped)
// accumulate until floor(ratio * n) cells are masked; overshoot is trimmed by
// unmasking uniformly random masked cells. Exactly floor(ratio * n) masked.
MaskPlan block_mask(int rows, int cols, double ratio, int64_t min_block, int64_t max_block, Rng& rng);

// Exactly floor(ratio * n) positions drawn uniformly without replacement.
MaskPlan uniform_mask(int64_t n, double ratio, Rng& rng);
MaskPlan uniform_mask_grid(int rows, int cols, double ratio, Rng& rng);

// (A, B) = (observed, masked) indices, each sorted ascending. Raises a
// configuration error when either side is empty.
std::pair<std::vector<int64_t>, std::vector<int64_t>> split(const MaskPlan& plan);

}  // namespace mimlab
