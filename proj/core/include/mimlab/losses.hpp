#pragma once

#include "mimlab/model.hpp"

namespace mimlab {

struct LossBreakdown {
  Tensor mim;    // scalar >= 0 (zero tensor when disabled)
  Tensor nce;    // scalar >= 0 (zero tensor when disabled)
  Tensor total;  // lambda_mim * mim + lambda_nce * nce
  double lambda_mim = 1.0;
  double lambda_nce = 1.0;
};

// Cross entropy against the visual words at each branch's missing positions,
// over the concatenation of both branches. The two position sets must
// partition the grid per image, so every patch contributes exactly once.
// targets: [B*n] tokens in grid order.
Tensor mim_loss(Tape* tape, const BranchOutput& a, const BranchOutput& b, std::span<const int64_t> targets);

// Single-sequence variant: cross entropy at `positions` only (the
// full-sequence baseline predicts just its masked set).
Tensor mim_loss_single(Tape* tape, const Tensor& logits, std::span<const int64_t> positions,
                       std::span<const int64_t> targets, int64_t batch);

// Symmetric InfoNCE over paired descriptor rows: row i of xa matches row i
// of xb, all other rows of the opposite side are negatives.
// loss = mean_i (l_a(i) + l_b(i)) / 2 with l_a(i) the softmax cross entropy
// of row i of (xa xb^T / tau) at column i, l_b the transposed mirror.
Tensor infonce(Tape* tape, const Tensor& xa, const Tensor& xb, double tau);

// Weighted combination; a zero weight skips that term's computation
// entirely (its breakdown entry is an exact zero constant).
LossBreakdown total_loss(Tape* tape, const BranchOutput& a, const BranchOutput& b, std::span<const int64_t> targets,
                         double tau, double lambda_mim, double lambda_nce);

}  // namespace mimlab
