#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mimlab/common.hpp"

namespace mimlab {

enum class DType { F32, F64 };

inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }
inline size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major n-dimensional array. Value semantics: copies share the
// underlying buffer; buffers are treated as immutable once a tensor has been
// handed to an operation. Each tensor value carries a unique id the tape uses
// to track identity across copies.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt = DType::F32);
  static Tensor full(Shape shape, double value, DType dt = DType::F32);
  static Tensor scalar(double value, DType dt = DType::F32);
  static Tensor from(Shape shape, std::span<const float> values);
  static Tensor from(Shape shape, std::span<const double> values);
  static Tensor from(Shape shape, std::initializer_list<double> values, DType dt = DType::F32);

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const;
  int64_t numel() const { return numel_; }
  DType dtype() const { return dtype_; }
  bool is_scalar() const { return numel_ == 1; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  std::span<const float> f32() const;
  std::span<const double> f64() const;
  // Mutable access; meant for construction and op kernels only.
  std::span<float> f32_mut();
  std::span<double> f64_mut();

  // Element fetch regardless of dtype (by flat index). Convenience for tests
  // and scalar plumbing, not a hot path.
  double at(int64_t flat) const;
  double item() const;

  Tensor astype(DType dt) const;
  Tensor clone() const;
  // New tensor value sharing this buffer with a different shape (same numel).
  Tensor reshaped(Shape shape) const;

  // Identity of this tensor *value* for tape bookkeeping.
  uint64_t vid() const { return vid_; }
  bool same_storage(const Tensor& other) const { return st_ == other.st_; }

  bool all_finite() const;

 private:
  struct Storage {
    DType dtype;
    std::vector<float> f;
    std::vector<double> d;
  };
  static Tensor make(Shape shape, DType dt);

  std::shared_ptr<Storage> st_;
  Shape shape_;
  int64_t numel_ = 0;
  DType dtype_ = DType::F32;
  uint64_t vid_ = 0;
  bool requires_grad_ = false;
};

}  // namespace mimlab
