#include "mimlab/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace mimlab {

namespace {
std::atomic<uint64_t> g_next_vid{1};
uint64_t fresh_vid() { return g_next_vid.fetch_add(1, std::memory_order_relaxed); }
}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) raise(ErrKind::Shape, "negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor Tensor::make(Shape shape, DType dt) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = shape_numel(t.shape_);
  t.dtype_ = dt;
  t.st_ = std::make_shared<Storage>();
  t.st_->dtype = dt;
  if (dt == DType::F32)
    t.st_->f.assign(static_cast<size_t>(t.numel_), 0.0f);
  else
    t.st_->d.assign(static_cast<size_t>(t.numel_), 0.0);
  t.vid_ = fresh_vid();
  return t;
}

Tensor Tensor::zeros(Shape shape, DType dt) { return make(std::move(shape), dt); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
  Tensor t = make(std::move(shape), dt);
  if (dt == DType::F32)
    std::fill(t.st_->f.begin(), t.st_->f.end(), static_cast<float>(value));
  else
    std::fill(t.st_->d.begin(), t.st_->d.end(), value);
  return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

Tensor Tensor::from(Shape shape, std::span<const float> values) {
  Tensor t = make(std::move(shape), DType::F32);
  if (static_cast<int64_t>(values.size()) != t.numel_)
    raise(ErrKind::Shape, "value count " + std::to_string(values.size()) + " does not fill shape " + shape_str(t.shape_));
  std::copy(values.begin(), values.end(), t.st_->f.begin());
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values) {
  Tensor t = make(std::move(shape), DType::F64);
  if (static_cast<int64_t>(values.size()) != t.numel_)
    raise(ErrKind::Shape, "value count " + std::to_string(values.size()) + " does not fill shape " + shape_str(t.shape_));
  std::copy(values.begin(), values.end(), t.st_->d.begin());
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dt) {
  Tensor t = make(std::move(shape), dt);
  if (static_cast<int64_t>(values.size()) != t.numel_)
    raise(ErrKind::Shape, "value count " + std::to_string(values.size()) + " does not fill shape " + shape_str(t.shape_));
  size_t i = 0;
  for (double v : values) {
    if (dt == DType::F32)
      t.st_->f[i] = static_cast<float>(v);
    else
      t.st_->d[i] = v;
    ++i;
  }
  return t;
}

int64_t Tensor::dim(int i) const {
  if (i < 0) i += rank();
  if (i < 0 || i >= rank()) raise(ErrKind::Index, "dim index out of range for shape " + shape_str(shape_));
  return shape_[static_cast<size_t>(i)];
}

std::span<const float> Tensor::f32() const {
  if (!st_) raise(ErrKind::Usage, "undefined tensor");
  if (dtype_ != DType::F32) raise(ErrKind::Usage, "tensor is f64, f32 view requested");
  return st_->f;
}

std::span<const double> Tensor::f64() const {
  if (!st_) raise(ErrKind::Usage, "undefined tensor");
  if (dtype_ != DType::F64) raise(ErrKind::Usage, "tensor is f32, f64 view requested");
  return st_->d;
}

std::span<float> Tensor::f32_mut() {
  if (!st_) raise(ErrKind::Usage, "undefined tensor");
  if (dtype_ != DType::F32) raise(ErrKind::Usage, "tensor is f64, f32 view requested");
  return st_->f;
}

std::span<double> Tensor::f64_mut() {
  if (!st_) raise(ErrKind::Usage, "undefined tensor");
  if (dtype_ != DType::F64) raise(ErrKind::Usage, "tensor is f32, f64 view requested");
  return st_->d;
}

double Tensor::at(int64_t flat) const {
  if (flat < 0 || flat >= numel_) raise(ErrKind::Index, "flat index " + std::to_string(flat) + " out of range");
  return dtype_ == DType::F32 ? static_cast<double>(st_->f[static_cast<size_t>(flat)]) : st_->d[static_cast<size_t>(flat)];
}

double Tensor::item() const {
  if (numel_ != 1) raise(ErrKind::Usage, "item() on tensor with " + std::to_string(numel_) + " elements");
  return at(0);
}

Tensor Tensor::astype(DType dt) const {
  if (!st_) raise(ErrKind::Usage, "undefined tensor");
  if (dt == dtype_) return clone();
  Tensor t = make(shape_, dt);
  for (int64_t i = 0; i < numel_; ++i) {
    double v = at(i);
    if (dt == DType::F32)
      t.st_->f[static_cast<size_t>(i)] = static_cast<float>(v);
    else
      t.st_->d[static_cast<size_t>(i)] = v;
  }
  return t;
}

Tensor Tensor::clone() const {
  if (!st_) raise(ErrKind::Usage, "undefined tensor");
  Tensor t = make(shape_, dtype_);
  if (dtype_ == DType::F32)
    t.st_->f = st_->f;
  else
    t.st_->d = st_->d;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (!st_) raise(ErrKind::Usage, "undefined tensor");
  int64_t n = shape_numel(shape);
  if (n != numel_)
    raise(ErrKind::Shape, "reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
  Tensor t = *this;
  t.shape_ = std::move(shape);
  t.vid_ = fresh_vid();
  t.requires_grad_ = false;
  return t;
}

bool Tensor::all_finite() const {
  if (!st_) return true;
  if (dtype_ == DType::F32) {
    for (float v : st_->f)
      if (!std::isfinite(v)) return false;
  } else {
    for (double v : st_->d)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace mimlab
