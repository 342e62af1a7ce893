#pragma once

#include <span>

#include "mimlab/tape.hpp"

// Differentiable tensor operations. Every op validates shapes, checks the
// produced values for NaN/Inf (raising ErrKind::Numeric), and appends a
// backward closure to the tape when gradients can flow to an input. Passing
// tape == nullptr runs pure inference.
namespace mimlab::ops {

// a[m,k] * b[k,n] -> [m,n]
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// a[m,k] * b[n,k]^T -> [m,n]
Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b);
// Grouped products over the leading dimension: a[g,m,k] * b[g,k,n] -> [g,m,n]
Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b);
// a[g,m,k] * b[g,n,k]^T -> [g,m,n]
Tensor bmm_nt(Tape* tape, const Tensor& a, const Tensor& b);

// Elementwise; shapes must match exactly.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
// x[m,n] + bias[n] broadcast over rows.
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias);

// Exact form: 0.5 * x * (1 + erf(x / sqrt(2))).
Tensor gelu(Tape* tape, const Tensor& x);
// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(Tape* tape, const Tensor& x, int axis = -1);
// Normalizes the last dimension; gain/bias have that length.
Tensor layernorm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

// Mean over rows of -log softmax(logits)[row, target].
Tensor cross_entropy_logits(Tape* tape, const Tensor& logits, std::span<const int64_t> targets);
// Mean over rows of -sum_j p[row,j] * log softmax(logits)[row,j].
Tensor cross_entropy_soft(Tape* tape, const Tensor& logits, const Tensor& target_probs);

// x[g*m, d] -> [g, d], mean over each block of m consecutive rows.
Tensor group_mean_rows(Tape* tape, const Tensor& x, int64_t groups);
// Rows scaled to unit Euclidean norm.
Tensor l2_normalize_rows(Tape* tape, const Tensor& x);

Tensor gather_rows(Tape* tape, const Tensor& x, std::span<const int64_t> idx);
Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b);
// v[d] -> [rows, d]
Tensor repeat_row(Tape* tape, const Tensor& v, int64_t rows);
Tensor reshape(Tape* tape, const Tensor& x, Shape shape);
// 2D transpose.
Tensor transpose(Tape* tape, const Tensor& x);
Tensor sum(Tape* tape, const Tensor& x);
Tensor mean(Tape* tape, const Tensor& x);

// [b*m, h*hd] -> [b*h, m, hd] and its inverse.
Tensor split_heads(Tape* tape, const Tensor& x, int64_t batch, int64_t rows, int64_t heads);
Tensor merge_heads(Tape* tape, const Tensor& x, int64_t batch, int64_t rows, int64_t heads);

// Non-differentiable helpers.
std::vector<int64_t> argmax_rows(const Tensor& x);

}  // namespace mimlab::ops
