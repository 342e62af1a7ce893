#include "mimlab/masking.hpp"

#include <algorithm>
#include <cmath>

#include "mimlab/common.hpp"

namespace mimlab {

int64_t MaskPlan::masked_count() const {
  int64_t c = 0;
  for (uint8_t m : masked) c += m;
  return c;
}

std::pair<int64_t, int64_t> scaled_block_bounds(int64_t n) {
  int64_t lo = std::max<int64_t>(1, 16 * n / 196);
  int64_t hi = std::max(lo, 75 * n / 196);
  return {lo, hi};
}

MaskPlan block_mask(int rows, int cols, double ratio, int64_t min_block, int64_t max_block, Rng& rng) {
  int64_t n = static_cast<int64_t>(rows) * cols;
  if (rows <= 0 || cols <= 0) raise(ErrKind::Config, "block_mask: empty grid");
  if (!(ratio > 0.0 && ratio < 1.0)) raise(ErrKind::Config, "block_mask: ratio must be in (0,1)");
  if (min_block < 1 || min_block > max_block || max_block > n)
    raise(ErrKind::Config, "block_mask: need 1 <= min_block <= max_block <= n, got [" + std::to_string(min_block) +
                               ", " + std::to_string(max_block) + "] for n=" + std::to_string(n));
  int64_t target = static_cast<int64_t>(ratio * static_cast<double>(n));
  MaskPlan plan{rows, cols, std::vector<uint8_t>(static_cast<size_t>(n), 0)};
  int64_t count = 0;
  while (count < target) {
    int64_t area = min_block + rng.uniform_int(max_block - min_block + 1);
    double aspect = rng.log_uniform(0.3, 1.0 / 0.3);
    int64_t bh = std::max<int64_t>(1, std::llround(std::sqrt(static_cast<double>(area) * aspect)));
    int64_t bw = std::max<int64_t>(1, std::llround(std::sqrt(static_cast<double>(area) / aspect)));
    // placement may overhang the grid on any side; the visible part is kept,
    // which keeps edge cells nearly as likely to be masked as interior ones
    int64_t top = rng.uniform_int(rows + bh - 1) - (bh - 1);
    int64_t left = rng.uniform_int(cols + bw - 1) - (bw - 1);
    for (int64_t y = std::max<int64_t>(0, top); y < std::min<int64_t>(rows, top + bh); ++y)
      for (int64_t x = std::max<int64_t>(0, left); x < std::min<int64_t>(cols, left + bw); ++x) {
        uint8_t& cell = plan.masked[static_cast<size_t>(y * cols + x)];
        if (!cell) {
          cell = 1;
          ++count;
        }
      }
  }
  if (count > target) {
    std::vector<int64_t> on;
    on.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < n; ++i)
      if (plan.masked[static_cast<size_t>(i)]) on.push_back(i);
    for (int64_t drop : rng.sample_without_replacement(count, count - target))
      plan.masked[static_cast<size_t>(on[static_cast<size_t>(drop)])] = 0;
  }
  return plan;
}

MaskPlan uniform_mask(int64_t n, double ratio, Rng& rng) { return uniform_mask_grid(1, static_cast<int>(n), ratio, rng); }

MaskPlan uniform_mask_grid(int rows, int cols, double ratio, Rng& rng) {
  int64_t n = static_cast<int64_t>(rows) * cols;
  if (n <= 0) raise(ErrKind::Config, "uniform_mask: empty grid");
  if (!(ratio > 0.0 && ratio < 1.0)) raise(ErrKind::Config, "uniform_mask: ratio must be in (0,1)");
  int64_t target = static_cast<int64_t>(ratio * static_cast<double>(n));
  MaskPlan plan{rows, cols, std::vector<uint8_t>(static_cast<size_t>(n), 0)};
  for (int64_t i : rng.sample_without_replacement(n, target)) plan.masked[static_cast<size_t>(i)] = 1;
  return plan;
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> split(const MaskPlan& plan) {
  std::vector<int64_t> a, b;
  for (int64_t i = 0; i < plan.n(); ++i)
    (plan.masked[static_cast<size_t>(i)] ? b : a).push_back(i);
  if (a.empty() || b.empty())
    raise(ErrKind::Config, "mask plan leaves a side empty (|observed|=" + std::to_string(a.size()) +
                               ", |masked|=" + std::to_string(b.size()) + ")");
  return {std::move(a), std::move(b)};
}

}  // namespace mimlab
