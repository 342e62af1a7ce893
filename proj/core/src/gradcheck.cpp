#include "mimlab/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace mimlab {

GradCheckReport grad_check(const std::function<Tensor(Tape*)>& f, std::span<Tensor> leaves, double h, double tol) {
  for (const Tensor& leaf : leaves) {
    if (leaf.dtype() != DType::F64) raise(ErrKind::Usage, "grad_check leaves must be f64");
    if (!leaf.requires_grad()) raise(ErrKind::Usage, "grad_check leaves must have requires_grad set");
  }
  Tape tape;
  Tensor loss = f(&tape);
  if (!loss.is_scalar()) raise(ErrKind::Usage, "grad_check target must be scalar");
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& leaf : leaves) analytic.push_back(tape.grad(leaf));

  GradCheckReport rep;
  rep.passed = true;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    auto buf = leaf.f64_mut();
    auto a = analytic[li].f64();
    for (size_t i = 0; i < buf.size(); ++i) {
      double saved = buf[i];
      buf[i] = saved + h;
      double up = f(nullptr).item();
      buf[i] = saved - h;
      double down = f(nullptr).item();
      buf[i] = saved;
      double numeric = (up - down) / (2.0 * h);
      double denom = std::max({std::fabs(a[i]), std::fabs(numeric), 1e-3});
      double rel = std::fabs(a[i] - numeric) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "leaf" + std::to_string(li) + "[" + std::to_string(i) + "]";
      }
    }
  }
  rep.passed = rep.max_rel_err < tol;
  return rep;
}

}  // namespace mimlab
