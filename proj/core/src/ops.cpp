#include "mimlab/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <vector>

namespace mimlab::ops {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const MatRM<T>>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;

template <typename T>
std::span<const T> cspan(const Tensor& t);
template <>
std::span<const float> cspan<float>(const Tensor& t) { return t.f32(); }
template <>
std::span<const double> cspan<double>(const Tensor& t) { return t.f64(); }

template <typename T>
std::span<T> mspan(Tensor& t);
template <>
std::span<float> mspan<float>(Tensor& t) { return t.f32_mut(); }
template <>
std::span<double> mspan<double>(Tensor& t) { return t.f64_mut(); }

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) raise(ErrKind::Numeric, std::string(op) + " produced non-finite values");
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) raise(ErrKind::Usage, std::string(op) + ": dtype mismatch");
}

void want_rank(const Tensor& t, int r, const char* op) {
  if (t.rank() != r)
    raise(ErrKind::Shape, std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " + shape_str(t.shape()));
}

// C[m,n] (+)= op(A) * op(B) with optional transposes on the mapped operands.
template <typename T>
void mm_kernel(const Tensor& a, const Tensor& b, Tensor& c, int64_t m, int64_t k, int64_t n,
               bool ta, bool tb, int64_t a_off = 0, int64_t b_off = 0, int64_t c_off = 0) {
  const T* ap = cspan<T>(a).data() + a_off;
  const T* bp = cspan<T>(b).data() + b_off;
  T* cp = mspan<T>(c).data() + c_off;
  MapC<T> A(ap, ta ? k : m, ta ? m : k);
  MapC<T> B(bp, tb ? n : k, tb ? k : n);
  MapM<T> C(cp, m, n);
  if (!ta && !tb)
    C.noalias() = A * B;
  else if (!ta && tb)
    C.noalias() = A * B.transpose();
  else if (ta && !tb)
    C.noalias() = A.transpose() * B;
  else
    C.noalias() = A.transpose() * B.transpose();
}

// Plain (non-recording) matrix product used inside backward closures.
Tensor raw_mm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  int64_t m = ta ? a.dim(1) : a.dim(0);
  int64_t k = ta ? a.dim(0) : a.dim(1);
  int64_t n = tb ? b.dim(0) : b.dim(1);
  Tensor c = Tensor::zeros({m, n}, a.dtype());
  if (a.dtype() == DType::F32)
    mm_kernel<float>(a, b, c, m, k, n, ta, tb);
  else
    mm_kernel<double>(a, b, c, m, k, n, ta, tb);
  return c;
}

template <typename T, typename F>
Tensor ew_unary(const Tensor& x, F&& f) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto xi = cspan<T>(x);
  auto oi = mspan<T>(out);
  for (size_t i = 0; i < xi.size(); ++i) oi[i] = f(xi[i]);
  return out;
}

template <typename T, typename F>
Tensor ew_binary(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  auto ai = cspan<T>(a);
  auto bi = cspan<T>(b);
  auto oi = mspan<T>(out);
  for (size_t i = 0; i < ai.size(); ++i) oi[i] = f(ai[i], bi[i]);
  return out;
}

Tensor mm_common(Tape* tape, const Tensor& a, const Tensor& b, bool tb, const char* name) {
  want_rank(a, 2, name);
  want_rank(b, 2, name);
  check_same_dtype(a, b, name);
  int64_t m = a.dim(0), k = a.dim(1);
  int64_t n = tb ? b.dim(0) : b.dim(1);
  int64_t bk = tb ? b.dim(1) : b.dim(0);
  if (k != bk)
    raise(ErrKind::Shape, std::string(name) + ": inner dims disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor c = Tensor::zeros({m, n}, a.dtype());
  if (a.dtype() == DType::F32)
    mm_kernel<float>(a, b, c, m, k, n, false, tb);
  else
    mm_kernel<double>(a, b, c, m, k, n, false, tb);
  check_finite(c, name);
  if (tape && tape->should_record({&a, &b})) {
    tape->record(c, [a, b, tb](const Tensor& g, Tape& t) {
      if (!tb) {
        t.accum(a, raw_mm(g, b, false, true));   // dA = G B^T
        t.accum(b, raw_mm(a, g, true, false));   // dB = A^T G
      } else {
        t.accum(a, raw_mm(g, b, false, false));  // dA = G B
        t.accum(b, raw_mm(g, a, true, false));   // dB = G^T A
      }
    });
  }
  return c;
}

Tensor bmm_common(Tape* tape, const Tensor& a, const Tensor& b, bool tb, const char* name) {
  want_rank(a, 3, name);
  want_rank(b, 3, name);
  check_same_dtype(a, b, name);
  int64_t grp = a.dim(0), m = a.dim(1), k = a.dim(2);
  if (b.dim(0) != grp)
    raise(ErrKind::Shape, std::string(name) + ": group counts disagree");
  int64_t n = tb ? b.dim(1) : b.dim(2);
  int64_t bk = tb ? b.dim(2) : b.dim(1);
  if (k != bk)
    raise(ErrKind::Shape, std::string(name) + ": inner dims disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor c = Tensor::zeros({grp, m, n}, a.dtype());
  for (int64_t i = 0; i < grp; ++i) {
    if (a.dtype() == DType::F32)
      mm_kernel<float>(a, b, c, m, k, n, false, tb, i * m * k, i * (tb ? n * k : k * n), i * m * n);
    else
      mm_kernel<double>(a, b, c, m, k, n, false, tb, i * m * k, i * (tb ? n * k : k * n), i * m * n);
  }
  check_finite(c, name);
  if (tape && tape->should_record({&a, &b})) {
    tape->record(c, [a, b, tb, grp, m, k, n](const Tensor& g, Tape& t) {
      Tensor da = Tensor::zeros(a.shape(), a.dtype());
      Tensor db = Tensor::zeros(b.shape(), b.dtype());
      for (int64_t i = 0; i < grp; ++i) {
        int64_t ao = i * m * k, bo = i * (tb ? n * k : k * n), go = i * m * n;
        if (!tb) {
          // dA_i = G_i B_i^T ; dB_i = A_i^T G_i
          if (a.dtype() == DType::F32) {
            mm_kernel<float>(g, b, da, m, n, k, false, true, go, bo, ao);
            mm_kernel<float>(a, g, db, k, m, n, true, false, ao, go, bo);
          } else {
            mm_kernel<double>(g, b, da, m, n, k, false, true, go, bo, ao);
            mm_kernel<double>(a, g, db, k, m, n, true, false, ao, go, bo);
          }
        } else {
          // dA_i = G_i B_i ; dB_i = G_i^T A_i
          if (a.dtype() == DType::F32) {
            mm_kernel<float>(g, b, da, m, n, k, false, false, go, bo, ao);
            mm_kernel<float>(g, a, db, n, m, k, true, false, go, ao, bo);
          } else {
            mm_kernel<double>(g, b, da, m, n, k, false, false, go, bo, ao);
            mm_kernel<double>(g, a, db, n, m, k, true, false, go, ao, bo);
          }
        }
      }
      t.accum(a, da);
      t.accum(b, db);
    });
  }
  return c;
}

// Decomposes a shape around one axis into [outer, len, inner] strides.
struct AxisView {
  int64_t outer, len, inner;
};

AxisView axis_view(const Tensor& x, int axis, const char* op) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) raise(ErrKind::Index, std::string(op) + ": axis out of range for shape " + shape_str(x.shape()));
  AxisView v{1, x.dim(axis), 1};
  for (int i = 0; i < axis; ++i) v.outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) v.inner *= x.dim(i);
  return v;
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) { return mm_common(tape, a, b, false, "matmul"); }
Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) { return mm_common(tape, a, b, true, "matmul_nt"); }
Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b) { return bmm_common(tape, a, b, false, "bmm"); }
Tensor bmm_nt(Tape* tape, const Tensor& a, const Tensor& b) { return bmm_common(tape, a, b, true, "bmm_nt"); }

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "add");
  if (a.shape() != b.shape()) raise(ErrKind::Shape, "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.dtype() == DType::F32 ? ew_binary<float>(a, b, [](float x, float y) { return x + y; })
                                       : ew_binary<double>(a, b, [](double x, double y) { return x + y; });
  check_finite(out, "add");
  if (tape && tape->should_record({&a, &b})) {
    tape->record(out, [a, b](const Tensor& g, Tape& t) {
      t.accum(a, g);
      t.accum(b, g);
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "sub");
  if (a.shape() != b.shape()) raise(ErrKind::Shape, "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.dtype() == DType::F32 ? ew_binary<float>(a, b, [](float x, float y) { return x - y; })
                                       : ew_binary<double>(a, b, [](double x, double y) { return x - y; });
  check_finite(out, "sub");
  if (tape && tape->should_record({&a, &b})) {
    tape->record(out, [a, b](const Tensor& g, Tape& t) {
      t.accum(a, g);
      Tensor ng = g.dtype() == DType::F32 ? ew_unary<float>(g, [](float x) { return -x; })
                                          : ew_unary<double>(g, [](double x) { return -x; });
      t.accum(b, ng);
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  check_same_dtype(a, b, "mul");
  if (a.shape() != b.shape()) raise(ErrKind::Shape, "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.dtype() == DType::F32 ? ew_binary<float>(a, b, [](float x, float y) { return x * y; })
                                       : ew_binary<double>(a, b, [](double x, double y) { return x * y; });
  check_finite(out, "mul");
  if (tape && tape->should_record({&a, &b})) {
    tape->record(out, [a, b](const Tensor& g, Tape& t) {
      auto times = [](const Tensor& u, const Tensor& v) {
        return u.dtype() == DType::F32 ? ew_binary<float>(u, v, [](float x, float y) { return x * y; })
                                       : ew_binary<double>(u, v, [](double x, double y) { return x * y; });
      };
      t.accum(a, times(g, b));
      t.accum(b, times(g, a));
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  Tensor out = a.dtype() == DType::F32 ? ew_unary<float>(a, [s](float x) { return static_cast<float>(x * s); })
                                       : ew_unary<double>(a, [s](double x) { return x * s; });
  check_finite(out, "scale");
  if (tape && tape->should_record({&a})) {
    tape->record(out, [a, s](const Tensor& g, Tape& t) {
      Tensor dg = g.dtype() == DType::F32 ? ew_unary<float>(g, [s](float x) { return static_cast<float>(x * s); })
                                          : ew_unary<double>(g, [s](double x) { return x * s; });
      t.accum(a, dg);
    });
  }
  return out;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
  want_rank(x, 2, "add_bias");
  want_rank(bias, 1, "add_bias");
  check_same_dtype(x, bias, "add_bias");
  int64_t m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) raise(ErrKind::Shape, "add_bias: bias length " + std::to_string(bias.dim(0)) + " != cols " + std::to_string(n));
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto run = [&]<typename T>() {
    auto xi = cspan<T>(x);
    auto bi = cspan<T>(bias);
    auto oi = mspan<T>(out);
    for (int64_t r = 0; r < m; ++r)
      for (int64_t c = 0; c < n; ++c) oi[r * n + c] = xi[r * n + c] + bi[c];
  };
  x.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  check_finite(out, "add_bias");
  if (tape && tape->should_record({&x, &bias})) {
    tape->record(out, [x, bias, m, n](const Tensor& g, Tape& t) {
      t.accum(x, g);
      Tensor db = Tensor::zeros(bias.shape(), bias.dtype());
      auto back = [&]<typename T>() {
        auto gi = cspan<T>(g);
        auto di = mspan<T>(db);
        for (int64_t r = 0; r < m; ++r)
          for (int64_t c = 0; c < n; ++c) di[c] += gi[r * n + c];
      };
      g.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(bias, db);
    });
  }
  return out;
}

Tensor gelu(Tape* tape, const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  Tensor out = x.dtype() == DType::F32
                   ? ew_unary<float>(x, [](float v) {
                       double d = v;
                       return static_cast<float>(0.5 * d * (1.0 + std::erf(d * inv_sqrt2)));
                     })
                   : ew_unary<double>(x, [](double d) { return 0.5 * d * (1.0 + std::erf(d * inv_sqrt2)); });
  check_finite(out, "gelu");
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x](const Tensor& g, Tape& t) {
      constexpr double inv_sqrt_2pi = 0.3989422804014326779;
      auto deriv = [](double d) {
        double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * d * d);
        return cdf + d * pdf;
      };
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      if (x.dtype() == DType::F32) {
        auto xi = x.f32();
        auto gi = g.f32();
        auto di = dx.f32_mut();
        for (size_t i = 0; i < xi.size(); ++i) di[i] = static_cast<float>(gi[i] * deriv(xi[i]));
      } else {
        auto xi = x.f64();
        auto gi = g.f64();
        auto di = dx.f64_mut();
        for (size_t i = 0; i < xi.size(); ++i) di[i] = gi[i] * deriv(xi[i]);
      }
      t.accum(x, dx);
    });
  }
  return out;
}

Tensor softmax(Tape* tape, const Tensor& x, int axis) {
  AxisView v = axis_view(x, axis, "softmax");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  auto run = [&]<typename T>() {
    auto xi = cspan<T>(x);
    auto oi = mspan<T>(out);
    for (int64_t o = 0; o < v.outer; ++o)
      for (int64_t in = 0; in < v.inner; ++in) {
        int64_t base = o * v.len * v.inner + in;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < v.len; ++j) mx = std::max(mx, static_cast<double>(xi[base + j * v.inner]));
        double z = 0.0;
        for (int64_t j = 0; j < v.len; ++j) z += std::exp(static_cast<double>(xi[base + j * v.inner]) - mx);
        for (int64_t j = 0; j < v.len; ++j)
          oi[base + j * v.inner] = static_cast<T>(std::exp(static_cast<double>(xi[base + j * v.inner]) - mx) / z);
      }
  };
  x.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  check_finite(out, "softmax");
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x, out, v](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      auto back = [&]<typename T>() {
        auto yi = cspan<T>(out);
        auto gi = cspan<T>(g);
        auto di = mspan<T>(dx);
        for (int64_t o = 0; o < v.outer; ++o)
          for (int64_t in = 0; in < v.inner; ++in) {
            int64_t base = o * v.len * v.inner + in;
            double dot = 0.0;
            for (int64_t j = 0; j < v.len; ++j) {
              int64_t k = base + j * v.inner;
              dot += static_cast<double>(gi[k]) * static_cast<double>(yi[k]);
            }
            for (int64_t j = 0; j < v.len; ++j) {
              int64_t k = base + j * v.inner;
              di[k] = static_cast<T>(static_cast<double>(yi[k]) * (static_cast<double>(gi[k]) - dot));
            }
          }
      };
      x.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(x, dx);
    });
  }
  return out;
}

Tensor layernorm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) raise(ErrKind::Shape, "layernorm: rank-0 input");
  want_rank(gain, 1, "layernorm");
  want_rank(bias, 1, "layernorm");
  check_same_dtype(x, gain, "layernorm");
  check_same_dtype(x, bias, "layernorm");
  int64_t d = x.dim(-1);
  if (gain.dim(0) != d || bias.dim(0) != d) raise(ErrKind::Shape, "layernorm: gain/bias length mismatch");
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
  Tensor rstd = Tensor::zeros({rows}, DType::F64);
  auto run = [&]<typename T>() {
    auto xi = cspan<T>(x);
    auto gi = cspan<T>(gain);
    auto bi = cspan<T>(bias);
    auto oi = mspan<T>(out);
    auto hi = mspan<T>(xhat);
    auto ri = rstd.f64_mut();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xi.data() + r * d;
      double mu = 0.0;
      for (int64_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        double c = row[j] - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      double rs = 1.0 / std::sqrt(var + eps);
      ri[r] = rs;
      for (int64_t j = 0; j < d; ++j) {
        double h = (row[j] - mu) * rs;
        hi[r * d + j] = static_cast<T>(h);
        oi[r * d + j] = static_cast<T>(h * static_cast<double>(gi[j]) + static_cast<double>(bi[j]));
      }
    }
  };
  x.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  check_finite(out, "layernorm");
  if (tape && tape->should_record({&x, &gain, &bias})) {
    tape->record(out, [x, gain, bias, xhat, rstd, rows, d](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      Tensor dgain = Tensor::zeros(gain.shape(), gain.dtype());
      Tensor dbias = Tensor::zeros(bias.shape(), bias.dtype());
      auto back = [&]<typename T>() {
        auto gi = cspan<T>(g);
        auto ga = cspan<T>(gain);
        auto hi = cspan<T>(xhat);
        auto ri = rstd.f64();
        auto dxi = mspan<T>(dx);
        auto dgi = mspan<T>(dgain);
        auto dbi = mspan<T>(dbias);
        for (int64_t r = 0; r < rows; ++r) {
          double mean_t = 0.0, mean_th = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            int64_t k = r * d + j;
            double tj = static_cast<double>(gi[k]) * static_cast<double>(ga[j]);
            mean_t += tj;
            mean_th += tj * static_cast<double>(hi[k]);
            dgi[j] += static_cast<T>(static_cast<double>(gi[k]) * static_cast<double>(hi[k]));
            dbi[j] += gi[k];
          }
          mean_t /= static_cast<double>(d);
          mean_th /= static_cast<double>(d);
          for (int64_t j = 0; j < d; ++j) {
            int64_t k = r * d + j;
            double tj = static_cast<double>(gi[k]) * static_cast<double>(ga[j]);
            dxi[k] = static_cast<T>(ri[r] * (tj - mean_t - static_cast<double>(hi[k]) * mean_th));
          }
        }
      };
      x.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(x, dx);
      t.accum(gain, dgain);
      t.accum(bias, dbias);
    });
  }
  return out;
}

namespace {

// Shared softmax-cross-entropy plumbing: returns probabilities and the
// per-row log partition minus logits, so both CE variants reuse it.
template <typename T>
void softmax_rows(std::span<const T> logits, int64_t rows, int64_t cols, std::vector<double>& probs,
                  std::vector<double>& logq) {
  probs.resize(static_cast<size_t>(rows * cols));
  logq.resize(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = logits.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (int64_t j = 0; j < cols; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    double lse = mx + std::log(z);
    for (int64_t j = 0; j < cols; ++j) {
      double lq = static_cast<double>(row[j]) - lse;
      logq[static_cast<size_t>(r * cols + j)] = lq;
      probs[static_cast<size_t>(r * cols + j)] = std::exp(lq);
    }
  }
}

}  // namespace

Tensor cross_entropy_logits(Tape* tape, const Tensor& logits, std::span<const int64_t> targets) {
  want_rank(logits, 2, "cross_entropy_logits");
  int64_t rows = logits.dim(0), cols = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != rows)
    raise(ErrKind::Shape, "cross_entropy_logits: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  if (rows == 0) raise(ErrKind::Shape, "cross_entropy_logits: empty batch");
  for (int64_t t : targets)
    if (t < 0 || t >= cols) raise(ErrKind::Index, "cross_entropy_logits: target " + std::to_string(t) + " out of range");
  std::vector<double> probs, logq;
  if (logits.dtype() == DType::F32)
    softmax_rows<float>(logits.f32(), rows, cols, probs, logq);
  else
    softmax_rows<double>(logits.f64(), rows, cols, probs, logq);
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) loss -= logq[static_cast<size_t>(r * cols + targets[r])];
  loss /= static_cast<double>(rows);
  Tensor out = Tensor::scalar(loss, logits.dtype());
  check_finite(out, "cross_entropy_logits");
  if (tape && tape->should_record({&logits})) {
    std::vector<int64_t> tcopy(targets.begin(), targets.end());
    tape->record(out, [logits, probs, tcopy, rows, cols](const Tensor& g, Tape& t) {
      double gs = g.item() / static_cast<double>(rows);
      Tensor dl = Tensor::zeros(logits.shape(), logits.dtype());
      auto back = [&]<typename T>() {
        auto di = mspan<T>(dl);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < cols; ++j) {
            double p = probs[static_cast<size_t>(r * cols + j)];
            double ind = (j == tcopy[static_cast<size_t>(r)]) ? 1.0 : 0.0;
            di[r * cols + j] = static_cast<T>(gs * (p - ind));
          }
      };
      logits.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(logits, dl);
    });
  }
  return out;
}

Tensor cross_entropy_soft(Tape* tape, const Tensor& logits, const Tensor& target_probs) {
  want_rank(logits, 2, "cross_entropy_soft");
  check_same_dtype(logits, target_probs, "cross_entropy_soft");
  if (logits.shape() != target_probs.shape())
    raise(ErrKind::Shape, "cross_entropy_soft: shape mismatch " + shape_str(logits.shape()) + " vs " + shape_str(target_probs.shape()));
  int64_t rows = logits.dim(0), cols = logits.dim(1);
  if (rows == 0) raise(ErrKind::Shape, "cross_entropy_soft: empty batch");
  std::vector<double> probs, logq;
  if (logits.dtype() == DType::F32)
    softmax_rows<float>(logits.f32(), rows, cols, probs, logq);
  else
    softmax_rows<double>(logits.f64(), rows, cols, probs, logq);
  double loss = 0.0;
  std::vector<double> rowsum(static_cast<size_t>(rows), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < cols; ++j) {
      double p = target_probs.at(r * cols + j);
      rowsum[static_cast<size_t>(r)] += p;
      loss -= p * logq[static_cast<size_t>(r * cols + j)];
    }
  }
  loss /= static_cast<double>(rows);
  Tensor out = Tensor::scalar(loss, logits.dtype());
  check_finite(out, "cross_entropy_soft");
  if (tape && tape->should_record({&logits, &target_probs})) {
    tape->record(out, [logits, target_probs, probs, logq, rowsum, rows, cols](const Tensor& g, Tape& t) {
      double gs = g.item() / static_cast<double>(rows);
      Tensor dl = Tensor::zeros(logits.shape(), logits.dtype());
      Tensor dp = Tensor::zeros(logits.shape(), logits.dtype());
      auto back = [&]<typename T>() {
        auto di = mspan<T>(dl);
        auto pi = mspan<T>(dp);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < cols; ++j) {
            size_t k = static_cast<size_t>(r * cols + j);
            di[k] = static_cast<T>(gs * (probs[k] * rowsum[static_cast<size_t>(r)] - target_probs.at(r * cols + j)));
            pi[k] = static_cast<T>(-gs * logq[k]);
          }
      };
      logits.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(logits, dl);
      t.accum(target_probs, dp);
    });
  }
  return out;
}

Tensor group_mean_rows(Tape* tape, const Tensor& x, int64_t groups) {
  want_rank(x, 2, "group_mean_rows");
  int64_t rows = x.dim(0), d = x.dim(1);
  if (groups <= 0 || rows % groups != 0)
    raise(ErrKind::Shape, "group_mean_rows: " + std::to_string(rows) + " rows not divisible into " + std::to_string(groups) + " groups");
  int64_t m = rows / groups;
  Tensor out = Tensor::zeros({groups, d}, x.dtype());
  auto run = [&]<typename T>() {
    auto xi = cspan<T>(x);
    auto oi = mspan<T>(out);
    for (int64_t gidx = 0; gidx < groups; ++gidx)
      for (int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int64_t r = 0; r < m; ++r) acc += xi[(gidx * m + r) * d + j];
        oi[gidx * d + j] = static_cast<T>(acc / static_cast<double>(m));
      }
  };
  x.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  check_finite(out, "group_mean_rows");
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x, groups, m, d](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      auto back = [&]<typename T>() {
        auto gi = cspan<T>(g);
        auto di = mspan<T>(dx);
        for (int64_t gidx = 0; gidx < groups; ++gidx)
          for (int64_t r = 0; r < m; ++r)
            for (int64_t j = 0; j < d; ++j)
              di[(gidx * m + r) * d + j] = static_cast<T>(static_cast<double>(gi[gidx * d + j]) / static_cast<double>(m));
      };
      g.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(x, dx);
    });
  }
  return out;
}

Tensor l2_normalize_rows(Tape* tape, const Tensor& x) {
  want_rank(x, 2, "l2_normalize_rows");
  constexpr double eps = 1e-12;
  int64_t rows = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  Tensor norms = Tensor::zeros({rows}, DType::F64);
  auto run = [&]<typename T>() {
    auto xi = cspan<T>(x);
    auto oi = mspan<T>(out);
    auto ni = norms.f64_mut();
    for (int64_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        double v = xi[r * d + j];
        s += v * v;
      }
      double n = std::sqrt(s + eps);
      ni[r] = n;
      for (int64_t j = 0; j < d; ++j) oi[r * d + j] = static_cast<T>(static_cast<double>(xi[r * d + j]) / n);
    }
  };
  x.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  check_finite(out, "l2_normalize_rows");
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x, norms, rows, d](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      auto back = [&]<typename T>() {
        auto xi = cspan<T>(x);
        auto gi = cspan<T>(g);
        auto ni = norms.f64();
        auto di = mspan<T>(dx);
        for (int64_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(xi[r * d + j]) * static_cast<double>(gi[r * d + j]);
          double n = ni[r], n3 = n * n * n;
          for (int64_t j = 0; j < d; ++j)
            di[r * d + j] = static_cast<T>(static_cast<double>(gi[r * d + j]) / n -
                                           static_cast<double>(xi[r * d + j]) * dot / n3);
        }
      };
      x.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(x, dx);
    });
  }
  return out;
}

Tensor gather_rows(Tape* tape, const Tensor& x, std::span<const int64_t> idx) {
  want_rank(x, 2, "gather_rows");
  int64_t rows = x.dim(0), d = x.dim(1);
  int64_t k = static_cast<int64_t>(idx.size());
  for (int64_t i : idx)
    if (i < 0 || i >= rows) raise(ErrKind::Index, "gather_rows: row index " + std::to_string(i) + " out of range");
  Tensor out = Tensor::zeros({k, d}, x.dtype());
  auto run = [&]<typename T>() {
    auto xi = cspan<T>(x);
    auto oi = mspan<T>(out);
    for (int64_t i = 0; i < k; ++i)
      std::copy(xi.begin() + idx[static_cast<size_t>(i)] * d, xi.begin() + (idx[static_cast<size_t>(i)] + 1) * d,
                oi.begin() + i * d);
  };
  x.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  if (tape && tape->should_record({&x})) {
    std::vector<int64_t> icopy(idx.begin(), idx.end());
    tape->record(out, [x, icopy, d](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      auto back = [&]<typename T>() {
        auto gi = cspan<T>(g);
        auto di = mspan<T>(dx);
        for (size_t i = 0; i < icopy.size(); ++i)
          for (int64_t j = 0; j < d; ++j) di[icopy[i] * d + j] += gi[static_cast<int64_t>(i) * d + j];
      };
      g.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(x, dx);
    });
  }
  return out;
}

Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b) {
  want_rank(a, 2, "concat_rows");
  want_rank(b, 2, "concat_rows");
  check_same_dtype(a, b, "concat_rows");
  if (a.dim(1) != b.dim(1)) raise(ErrKind::Shape, "concat_rows: column counts disagree");
  int64_t ma = a.dim(0), mb = b.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros({ma + mb, d}, a.dtype());
  auto run = [&]<typename T>() {
    auto ai = cspan<T>(a);
    auto bi = cspan<T>(b);
    auto oi = mspan<T>(out);
    std::copy(ai.begin(), ai.end(), oi.begin());
    std::copy(bi.begin(), bi.end(), oi.begin() + ma * d);
  };
  a.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  if (tape && tape->should_record({&a, &b})) {
    tape->record(out, [a, b, ma, mb, d](const Tensor& g, Tape& t) {
      Tensor da = Tensor::zeros(a.shape(), a.dtype());
      Tensor db = Tensor::zeros(b.shape(), b.dtype());
      auto back = [&]<typename T>() {
        auto gi = cspan<T>(g);
        std::copy(gi.begin(), gi.begin() + ma * d, mspan<T>(da).begin());
        std::copy(gi.begin() + ma * d, gi.begin() + (ma + mb) * d, mspan<T>(db).begin());
      };
      g.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(a, da);
      t.accum(b, db);
    });
  }
  return out;
}

Tensor repeat_row(Tape* tape, const Tensor& v, int64_t rows) {
  want_rank(v, 1, "repeat_row");
  if (rows <= 0) raise(ErrKind::Shape, "repeat_row: non-positive row count");
  int64_t d = v.dim(0);
  Tensor out = Tensor::zeros({rows, d}, v.dtype());
  auto run = [&]<typename T>() {
    auto vi = cspan<T>(v);
    auto oi = mspan<T>(out);
    for (int64_t r = 0; r < rows; ++r) std::copy(vi.begin(), vi.end(), oi.begin() + r * d);
  };
  v.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  if (tape && tape->should_record({&v})) {
    tape->record(out, [v, rows, d](const Tensor& g, Tape& t) {
      Tensor dv = Tensor::zeros(v.shape(), v.dtype());
      auto back = [&]<typename T>() {
        auto gi = cspan<T>(g);
        auto di = mspan<T>(dv);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) di[j] += gi[r * d + j];
      };
      g.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(v, dv);
    });
  }
  return out;
}

Tensor reshape(Tape* tape, const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x](const Tensor& g, Tape& t) { t.accum(x, g.reshaped(x.shape())); });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& x) {
  want_rank(x, 2, "transpose");
  int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m}, x.dtype());
  auto run = [&]<typename T>() {
    auto xi = cspan<T>(x);
    auto oi = mspan<T>(out);
    for (int64_t r = 0; r < m; ++r)
      for (int64_t c = 0; c < n; ++c) oi[c * m + r] = xi[r * n + c];
  };
  x.dtype() == DType::F32 ? run.operator()<float>() : run.operator()<double>();
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x, m, n](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      auto back = [&]<typename T>() {
        auto gi = cspan<T>(g);
        auto di = mspan<T>(dx);
        for (int64_t c = 0; c < n; ++c)
          for (int64_t r = 0; r < m; ++r) di[r * n + c] = gi[c * m + r];
      };
      g.dtype() == DType::F32 ? back.operator()<float>() : back.operator()<double>();
      t.accum(x, dx);
    });
  }
  return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  Tensor out = Tensor::scalar(acc, x.dtype());
  check_finite(out, "sum");
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x](const Tensor& g, Tape& t) { t.accum(x, Tensor::full(x.shape(), g.item(), x.dtype())); });
  }
  return out;
}

Tensor mean(Tape* tape, const Tensor& x) {
  if (x.numel() == 0) raise(ErrKind::Shape, "mean: empty tensor");
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  double inv = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(acc * inv, x.dtype());
  check_finite(out, "mean");
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x, inv](const Tensor& g, Tape& t) { t.accum(x, Tensor::full(x.shape(), g.item() * inv, x.dtype())); });
  }
  return out;
}

namespace {

// Forward permutation shared by split/merge: split copies x -> y, merge
// copies y -> x, with y[(b*H + h), t, c] <-> x[b*m + t, h*hd + c].
template <typename T>
void head_permute(std::span<const T> src, std::span<T> dst, int64_t b, int64_t m, int64_t h, int64_t hd, bool split) {
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t hi = 0; hi < h; ++hi)
      for (int64_t t = 0; t < m; ++t)
        for (int64_t c = 0; c < hd; ++c) {
          int64_t flat2d = (bi * m + t) * (h * hd) + hi * hd + c;
          int64_t flat3d = ((bi * h + hi) * m + t) * hd + c;
          if (split)
            dst[flat3d] = src[flat2d];
          else
            dst[flat2d] = src[flat3d];
        }
}

}  // namespace

Tensor split_heads(Tape* tape, const Tensor& x, int64_t batch, int64_t rows, int64_t heads) {
  want_rank(x, 2, "split_heads");
  if (x.dim(0) != batch * rows) raise(ErrKind::Shape, "split_heads: row count != batch * rows");
  if (heads <= 0 || x.dim(1) % heads != 0) raise(ErrKind::Shape, "split_heads: columns not divisible by heads");
  int64_t hd = x.dim(1) / heads;
  Tensor out = Tensor::zeros({batch * heads, rows, hd}, x.dtype());
  if (x.dtype() == DType::F32)
    head_permute<float>(x.f32(), out.f32_mut(), batch, rows, heads, hd, true);
  else
    head_permute<double>(x.f64(), out.f64_mut(), batch, rows, heads, hd, true);
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x, batch, rows, heads, hd](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      if (g.dtype() == DType::F32)
        head_permute<float>(g.f32(), dx.f32_mut(), batch, rows, heads, hd, false);
      else
        head_permute<double>(g.f64(), dx.f64_mut(), batch, rows, heads, hd, false);
      t.accum(x, dx);
    });
  }
  return out;
}

Tensor merge_heads(Tape* tape, const Tensor& x, int64_t batch, int64_t rows, int64_t heads) {
  want_rank(x, 3, "merge_heads");
  if (x.dim(0) != batch * heads || x.dim(1) != rows)
    raise(ErrKind::Shape, "merge_heads: shape " + shape_str(x.shape()) + " does not match batch/rows/heads");
  int64_t hd = x.dim(2);
  Tensor out = Tensor::zeros({batch * rows, heads * hd}, x.dtype());
  if (x.dtype() == DType::F32)
    head_permute<float>(x.f32(), out.f32_mut(), batch, rows, heads, hd, false);
  else
    head_permute<double>(x.f64(), out.f64_mut(), batch, rows, heads, hd, false);
  if (tape && tape->should_record({&x})) {
    tape->record(out, [x, batch, rows, heads, hd](const Tensor& g, Tape& t) {
      Tensor dx = Tensor::zeros(x.shape(), x.dtype());
      if (g.dtype() == DType::F32)
        head_permute<float>(g.f32(), dx.f32_mut(), batch, rows, heads, hd, true);
      else
        head_permute<double>(g.f64(), dx.f64_mut(), batch, rows, heads, hd, true);
      t.accum(x, dx);
    });
  }
  return out;
}

std::vector<int64_t> argmax_rows(const Tensor& x) {
  if (x.rank() != 2) raise(ErrKind::Shape, "argmax_rows: expected rank 2");
  int64_t rows = x.dim(0), cols = x.dim(1);
  if (cols == 0) raise(ErrKind::Shape, "argmax_rows: zero columns");
  std::vector<int64_t> out(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    int64_t best = 0;
    double bv = x.at(r * cols);
    for (int64_t c = 1; c < cols; ++c) {
      double v = x.at(r * cols + c);
      if (v > bv) {
        bv = v;
        best = c;
      }
    }
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

}  // namespace mimlab::ops
