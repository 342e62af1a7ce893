#include "mimlab/losses.hpp"

namespace mimlab {

namespace {

// positions: per image `m` local grid indices, concatenated over the batch.
std::vector<int64_t> targets_at(std::span<const int64_t> positions, std::span<const int64_t> targets, int64_t batch) {
  if (batch < 1) raise(ErrKind::Usage, "empty batch");
  if (targets.size() % static_cast<size_t>(batch) != 0 || positions.size() % static_cast<size_t>(batch) != 0)
    raise(ErrKind::Usage, "positions/targets do not tile the batch");
  int64_t n = static_cast<int64_t>(targets.size()) / batch;
  int64_t m = static_cast<int64_t>(positions.size()) / batch;
  std::vector<int64_t> out;
  out.reserve(positions.size());
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t r = 0; r < m; ++r) {
      int64_t p = positions[static_cast<size_t>(b * m + r)];
      if (p < 0 || p >= n) raise(ErrKind::Usage, "position out of grid range");
      out.push_back(targets[static_cast<size_t>(b * n + p)]);
    }
  return out;
}

}  // namespace

Tensor mim_loss(Tape* tape, const BranchOutput& a, const BranchOutput& b, std::span<const int64_t> targets) {
  int64_t batch = a.descriptors.dim(0);
  if (b.descriptors.dim(0) != batch) raise(ErrKind::Usage, "branch batch sizes disagree");
  if (targets.size() % static_cast<size_t>(batch) != 0) raise(ErrKind::Usage, "targets do not tile the batch");
  int64_t n = static_cast<int64_t>(targets.size()) / batch;
  int64_t ma = static_cast<int64_t>(a.positions.size()) / batch;
  int64_t mb = static_cast<int64_t>(b.positions.size()) / batch;
  if (ma + mb != n) raise(ErrKind::Usage, "branch positions do not partition the grid");
  for (int64_t i = 0; i < batch; ++i) {
    std::vector<uint8_t> seen(static_cast<size_t>(n), 0);
    for (int64_t r = 0; r < ma; ++r) seen[static_cast<size_t>(a.positions[static_cast<size_t>(i * ma + r)])] ^= 1;
    for (int64_t r = 0; r < mb; ++r) seen[static_cast<size_t>(b.positions[static_cast<size_t>(i * mb + r)])] ^= 1;
    for (uint8_t s : seen)
      if (!s) raise(ErrKind::Usage, "branch positions do not partition the grid");
  }
  Tensor logits = ops::concat_rows(tape, a.logits, b.logits);
  std::vector<int64_t> tg = targets_at(a.positions, targets, batch);
  std::vector<int64_t> tb = targets_at(b.positions, targets, batch);
  tg.insert(tg.end(), tb.begin(), tb.end());
  return ops::cross_entropy_logits(tape, logits, tg);
}

Tensor mim_loss_single(Tape* tape, const Tensor& logits, std::span<const int64_t> positions,
                       std::span<const int64_t> targets, int64_t batch) {
  std::vector<int64_t> tg = targets_at(positions, targets, batch);
  if (logits.dim(0) != static_cast<int64_t>(tg.size())) raise(ErrKind::Usage, "logit rows do not match positions");
  return ops::cross_entropy_logits(tape, logits, tg);
}

Tensor infonce(Tape* tape, const Tensor& xa, const Tensor& xb, double tau) {
  if (tau <= 0) raise(ErrKind::Config, "infonce temperature must be > 0");
  if (xa.rank() != 2 || xa.shape() != xb.shape()) raise(ErrKind::Shape, "descriptor batches must share a [B, d] shape");
  int64_t batch = xa.dim(0);
  if (batch < 1) raise(ErrKind::Usage, "empty batch");
  Tensor sim = ops::scale(tape, ops::matmul_nt(tape, xa, xb), 1.0 / tau);
  std::vector<int64_t> diag(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i) diag[static_cast<size_t>(i)] = i;
  Tensor la = ops::cross_entropy_logits(tape, sim, diag);
  Tensor lb = ops::cross_entropy_logits(tape, ops::transpose(tape, sim), diag);
  return ops::scale(tape, ops::add(tape, la, lb), 0.5);
}

LossBreakdown total_loss(Tape* tape, const BranchOutput& a, const BranchOutput& b, std::span<const int64_t> targets,
                         double tau, double lambda_mim, double lambda_nce) {
  if (lambda_mim < 0 || lambda_nce < 0) raise(ErrKind::Config, "loss weights must be >= 0");
  if (lambda_mim == 0 && lambda_nce == 0) raise(ErrKind::Config, "at least one loss weight must be > 0");
  LossBreakdown out;
  out.lambda_mim = lambda_mim;
  out.lambda_nce = lambda_nce;
  DType dt = a.logits.dtype();
  out.mim = lambda_mim > 0 ? mim_loss(tape, a, b, targets) : Tensor::scalar(0.0, dt);
  out.nce = lambda_nce > 0 ? infonce(tape, a.descriptors, b.descriptors, tau) : Tensor::scalar(0.0, dt);
  if (lambda_nce == 0)
    out.total = ops::scale(tape, out.mim, lambda_mim);
  else if (lambda_mim == 0)
    out.total = ops::scale(tape, out.nce, lambda_nce);
  else
    out.total = ops::add(tape, ops::scale(tape, out.mim, lambda_mim), ops::scale(tape, out.nce, lambda_nce));
  return out;
}

}  // namespace mimlab
