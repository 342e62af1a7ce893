#include "mimlab/tape.hpp"

namespace mimlab {

void Tape::watch(const Tensor& t) {
  if (!t.defined()) raise(ErrKind::Usage, "cannot watch an undefined tensor");
  tracked_[t.vid()] = true;
}

bool Tape::tracked(uint64_t vid) const { return tracked_.contains(vid); }

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) {
  bool any = false;
  for (const Tensor* t : inputs) {
    if (!t || !t->defined()) continue;
    if (tracked_.contains(t->vid())) {
      any = true;
    } else if (t->requires_grad()) {
      watch(*t);
      any = true;
    }
  }
  return any;
}

void Tape::record(const Tensor& out, BackFn fn) {
  tracked_[out.vid()] = true;
  nodes_.push_back({out.vid(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.is_scalar()) raise(ErrKind::Usage, "backward() expects a scalar, got shape " + shape_str(loss.shape()));
  if (!tracked_.contains(loss.vid()))
    raise(ErrKind::Usage, "backward() target was not produced under this tape");
  grads_[loss.vid()] = Tensor::full(loss.shape(), 1.0, loss.dtype());
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto g = grads_.find(it->out_vid);
    if (g == grads_.end()) continue;
    it->fn(g->second, *this);
  }
}

void Tape::accum(const Tensor& target, const Tensor& g) {
  if (target.shape() != g.shape())
    raise(ErrKind::Shape,
          "gradient shape " + shape_str(g.shape()) + " does not match value shape " + shape_str(target.shape()));
  if (target.dtype() != g.dtype()) raise(ErrKind::Usage, "gradient dtype mismatch");
  auto it = grads_.find(target.vid());
  if (it == grads_.end()) {
    grads_.emplace(target.vid(), g.clone());
    return;
  }
  Tensor& slot = it->second;
  if (slot.dtype() == DType::F32) {
    auto dst = slot.f32_mut();
    auto src = g.f32();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  } else {
    auto dst = slot.f64_mut();
    auto src = g.f64();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

bool Tape::has_grad(const Tensor& t) const { return grads_.contains(t.vid()); }

Tensor Tape::grad(const Tensor& t) const {
  auto it = grads_.find(t.vid());
  if (it == grads_.end()) return Tensor::zeros(t.shape(), t.dtype());
  return it->second;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  tracked_.clear();
}

}  // namespace mimlab
