#include "mimlab/tokenizer.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "mimlab/common.hpp"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace mimlab {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool rows_equal(std::span<const float> a, std::span<const float> b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Unit-normalizes a row in place; returns false for (near-)zero rows.
bool normalize_row(std::span<float> row) {
  double s = 0.0;
  for (float v : row) s += static_cast<double>(v) * v;
  if (s < 1e-16) return false;
  float inv = static_cast<float>(1.0 / std::sqrt(s));
  for (float& v : row) v *= inv;
  return true;
}

void center_row(std::span<float> row) {
  double mu = 0.0;
  for (float v : row) mu += v;
  mu /= static_cast<double>(row.size());
  for (float& v : row) v -= static_cast<float>(mu);
}

bool row_is_duplicate(const Tensor& vectors, int64_t filled, std::span<const float> row) {
  auto all = vectors.f32();
  int64_t d = vectors.dim(1);
  for (int64_t i = 0; i < filled; ++i)
    if (rows_equal(all.subspan(static_cast<size_t>(i * d), static_cast<size_t>(d)), row)) return true;
  return false;
}

struct PatchIndex {
  const LabeledDataset* ds;
  int patch_size;
  std::vector<int64_t> offsets;  // prefix sums of per-image patch counts
  int64_t total = 0;

  PatchIndex(const LabeledDataset& dataset, int psize) : ds(&dataset), patch_size(psize) {
    offsets.reserve(dataset.size() + 1);
    offsets.push_back(0);
    for (const Image& img : dataset.images) {
      if (img.h % psize != 0 || img.w % psize != 0)
        raise(ErrKind::Shape, "dataset image not divisible by patch size " + std::to_string(psize));
      total += static_cast<int64_t>(img.h / psize) * (img.w / psize);
      offsets.push_back(total);
    }
  }

  // Patch `pair` (global index over all images' grid positions) into `out`.
  void extract(int64_t pair, std::span<float> out) const {
    size_t img_i = static_cast<size_t>(std::upper_bound(offsets.begin(), offsets.end(), pair) - offsets.begin()) - 1;
    const Image& img = ds->images[img_i];
    int cols = img.w / patch_size;
    int64_t local = pair - offsets[img_i];
    int pr = static_cast<int>(local / cols);
    int pc = static_cast<int>(local % cols);
    int64_t k = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          out[static_cast<size_t>(k++)] = img.at(c, pr * patch_size + y, pc * patch_size + x);
  }
};

}  // namespace

VocabKind vocab_kind_from_name(const std::string& name) {
  if (name == "random_projection") return VocabKind::RandomProjection;
  if (name == "random_patches") return VocabKind::RandomPatches;
  if (name == "kmeans") return VocabKind::KMeans;
  raise(ErrKind::Config, "unknown tokenizer kind: " + name);
}

const char* vocab_kind_name(VocabKind k) {
  switch (k) {
    case VocabKind::RandomProjection: return "random_projection";
    case VocabKind::RandomPatches: return "random_patches";
    default: return "kmeans";
  }
}

Vocabulary build_random_projection(int64_t V, int64_t d, uint64_t seed, bool center) {
  if (V < 2) raise(ErrKind::Config, "vocabulary size must be >= 2");
  if (d < 1) raise(ErrKind::Config, "patch dimension must be >= 1");
  Vocabulary vocab{VocabKind::RandomProjection, V, d, seed, center, Tensor::zeros({V, d}, DType::F32)};
  Rng rng(mix_seed_str(seed, "vocab-random-projection"));
  auto data = vocab.vectors.f32_mut();
  for (int64_t i = 0; i < V; ++i) {
    auto row = data.subspan(static_cast<size_t>(i * d), static_cast<size_t>(d));
    for (;;) {
      for (float& v : row) v = static_cast<float>(rng.uniform(-1.0, 1.0));
      if (center) center_row(row);
      if (normalize_row(row) && !row_is_duplicate(vocab.vectors, i, row)) break;
    }
  }
  return vocab;
}

Vocabulary build_random_patches(const LabeledDataset& ds, int64_t V, int patch_size, uint64_t seed, bool center) {
  if (V < 2) raise(ErrKind::Config, "vocabulary size must be >= 2");
  PatchIndex index(ds, patch_size);
  if (index.total < V)
    raise(ErrKind::Capacity, "dataset supplies " + std::to_string(index.total) + " patches, need " + std::to_string(V));
  int64_t d = static_cast<int64_t>(3) * patch_size * patch_size;
  Vocabulary vocab{VocabKind::RandomPatches, V, d, seed, center, Tensor::zeros({V, d}, DType::F32)};
  Rng rng(mix_seed_str(seed, "vocab-random-patches"));
  auto data = vocab.vectors.f32_mut();
  int64_t attempts = 0, limit = 1000 * V;
  for (int64_t i = 0; i < V; ++i) {
    auto row = data.subspan(static_cast<size_t>(i * d), static_cast<size_t>(d));
    for (;;) {
      if (++attempts > limit)
        raise(ErrKind::Capacity, "could not draw " + std::to_string(V) + " distinct patches from the dataset");
      int64_t pair = rng.uniform_int(index.total);
      index.extract(pair, row);
      if (center) center_row(row);
      if (normalize_row(row) && !row_is_duplicate(vocab.vectors, i, row)) break;
    }
  }
  return vocab;
}

Tensor kmeans_pp_init(const Tensor& points, int64_t k, Rng& rng) {
  if (points.rank() != 2) raise(ErrKind::Shape, "kmeans_pp_init: points must be [n, d]");
  int64_t n = points.dim(0), d = points.dim(1);
  if (k < 1 || k > n) raise(ErrKind::Capacity, "kmeans_pp_init: k out of range");
  Tensor pts = points.dtype() == DType::F64 ? points : points.astype(DType::F64);
  auto p = pts.f64();
  Tensor centroids = Tensor::zeros({k, d}, DType::F64);
  auto c = centroids.f64_mut();
  std::vector<double> d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  int64_t first = rng.uniform_int(n);
  std::copy(p.begin() + first * d, p.begin() + (first + 1) * d, c.begin());
  for (int64_t j = 1; j < k; ++j) {
    const double* last = c.data() + (j - 1) * d;
    double mass = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t t = 0; t < d; ++t) {
        double diff = p[i * d + t] - last[t];
        s += diff * diff;
      }
      d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], s);
      mass += d2[static_cast<size_t>(i)];
    }
    int64_t pick;
    if (mass <= 0.0) {
      pick = rng.uniform_int(n);
    } else {
      double u = rng.uniform() * mass;
      double acc = 0.0;
      pick = n - 1;
      for (int64_t i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    std::copy(p.begin() + pick * d, p.begin() + (pick + 1) * d, c.begin() + j * d);
  }
  return centroids;
}

Tensor kmeans_lloyd(const Tensor& points, Tensor centroids, int max_iters, double tol, KMeansTrace* trace) {
  if (points.rank() != 2 || centroids.rank() != 2 || points.dim(1) != centroids.dim(1))
    raise(ErrKind::Shape, "kmeans_lloyd: points/centroids shapes incompatible");
  Tensor pts = points.dtype() == DType::F64 ? points : points.astype(DType::F64);
  Tensor cen = centroids.dtype() == DType::F64 ? centroids.clone() : centroids.astype(DType::F64);
  int64_t n = pts.dim(0), d = pts.dim(1), k = cen.dim(0);
  auto p = pts.f64();
  auto c = cen.f64_mut();
  std::vector<int64_t> assign(static_cast<size_t>(n), 0);
  std::vector<double> pdist(static_cast<size_t>(n), 0.0);
  std::vector<double> pnorm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t t = 0; t < d; ++t) s += p[i * d + t] * p[i * d + t];
    pnorm[static_cast<size_t>(i)] = s;
  }
  constexpr int64_t chunk = 4096;
  MatD dots(std::min(chunk, n), k);
  double prev = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<double> cnorm(static_cast<size_t>(k));
    for (int64_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (int64_t t = 0; t < d; ++t) s += c[j * d + t] * c[j * d + t];
      cnorm[static_cast<size_t>(j)] = s;
    }
    double obj = 0.0;
    Eigen::Map<const MatD> P(p.data(), n, d);
    Eigen::Map<const MatD> C(c.data(), k, d);
    for (int64_t base = 0; base < n; base += chunk) {
      int64_t rows = std::min(chunk, n - base);
      dots.topRows(rows).noalias() = P.middleRows(base, rows) * C.transpose();
      for (int64_t r = 0; r < rows; ++r) {
        int64_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < k; ++j) {
          double dist = pnorm[static_cast<size_t>(base + r)] + cnorm[static_cast<size_t>(j)] - 2.0 * dots(r, j);
          if (dist < bd) {
            bd = dist;
            best = j;
          }
        }
        assign[static_cast<size_t>(base + r)] = best;
        pdist[static_cast<size_t>(base + r)] = std::max(bd, 0.0);
        obj += std::max(bd, 0.0);
      }
    }
    if (trace) trace->objective.push_back(obj);
    if (std::isfinite(prev) && prev - obj <= tol * std::max(prev, 1e-300)) break;
    prev = obj;

    std::vector<double> sums(static_cast<size_t>(k * d), 0.0);
    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    for (int64_t i = 0; i < n; ++i) {
      int64_t j = assign[static_cast<size_t>(i)];
      ++counts[static_cast<size_t>(j)];
      for (int64_t t = 0; t < d; ++t) sums[static_cast<size_t>(j * d + t)] += p[i * d + t];
    }
    for (int64_t j = 0; j < k; ++j) {
      if (counts[static_cast<size_t>(j)] == 0) continue;
      for (int64_t t = 0; t < d; ++t) c[j * d + t] = sums[static_cast<size_t>(j * d + t)] / counts[static_cast<size_t>(j)];
    }
    for (int64_t j = 0; j < k; ++j) {
      if (counts[static_cast<size_t>(j)] != 0) continue;
      // reseed dead centroid to the worst-fit point
      int64_t far = 0;
      for (int64_t i = 1; i < n; ++i)
        if (pdist[static_cast<size_t>(i)] > pdist[static_cast<size_t>(far)]) far = i;
      std::copy(p.begin() + far * d, p.begin() + (far + 1) * d, c.begin() + j * d);
      pdist[static_cast<size_t>(far)] = 0.0;
      assign[static_cast<size_t>(far)] = j;
    }
  }
  return cen;
}

Vocabulary build_kmeans(const LabeledDataset& ds, int64_t V, int patch_size, int64_t sample_budget, int max_iters,
                        uint64_t seed, bool center, KMeansTrace* trace) {
  if (V < 2) raise(ErrKind::Config, "vocabulary size must be >= 2");
  if (sample_budget < V)
    raise(ErrKind::Capacity, "sample budget " + std::to_string(sample_budget) + " below vocabulary size " + std::to_string(V));
  PatchIndex index(ds, patch_size);
  if (index.total < V)
    raise(ErrKind::Capacity, "dataset supplies " + std::to_string(index.total) + " patches, need " + std::to_string(V));
  int64_t S = std::min(sample_budget, index.total);
  int64_t d = static_cast<int64_t>(3) * patch_size * patch_size;
  Rng rng(mix_seed_str(seed, "vocab-kmeans"));
  std::vector<int64_t> pairs = rng.sample_without_replacement(index.total, S);
  Tensor pts = Tensor::zeros({S, d}, DType::F32);
  auto pbuf = pts.f32_mut();
  for (int64_t i = 0; i < S; ++i) {
    auto row = pbuf.subspan(static_cast<size_t>(i * d), static_cast<size_t>(d));
    index.extract(pairs[static_cast<size_t>(i)], row);
    if (center) center_row(row);
  }
  Tensor init = kmeans_pp_init(pts, V, rng);
  Tensor cen = kmeans_lloyd(pts, init, max_iters, 1e-4, trace);
  Vocabulary vocab{VocabKind::KMeans, V, d, seed, center, cen.astype(DType::F32)};
  auto data = vocab.vectors.f32_mut();
  for (int64_t i = 0; i < V; ++i) {
    auto row = data.subspan(static_cast<size_t>(i * d), static_cast<size_t>(d));
    if (!normalize_row(row)) raise(ErrKind::Data, "degenerate zero centroid in k-means vocabulary");
    if (row_is_duplicate(vocab.vectors, i, row))
      raise(ErrKind::Data, "k-means produced duplicate vocabulary rows; dataset too degenerate for V=" + std::to_string(V));
  }
  return vocab;
}

std::vector<int64_t> tokenize_rows(const Tensor& patches, const Vocabulary& vocab) {
  if (patches.rank() != 2 || patches.dim(1) != vocab.d)
    raise(ErrKind::Shape, "tokenize: patch dimension " + shape_str(patches.shape()) + " does not match vocabulary d=" +
                              std::to_string(vocab.d));
  int64_t m = patches.dim(0), d = vocab.d, V = vocab.V;
  Tensor input = patches.dtype() == DType::F32 ? patches : patches.astype(DType::F32);
  Tensor centered;
  if (vocab.center) {
    centered = input.clone();
    auto buf = centered.f32_mut();
    for (int64_t i = 0; i < m; ++i) center_row(buf.subspan(static_cast<size_t>(i * d), static_cast<size_t>(d)));
    input = centered;
  }
  MatF scores(m, V);
  Eigen::Map<const MatF> X(input.f32().data(), m, d);
  Eigen::Map<const MatF> E(vocab.vectors.f32().data(), V, d);
  scores.noalias() = X * E.transpose();
  std::vector<int64_t> tokens(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    int64_t best = 0;
    float bv = scores(i, 0);
    for (int64_t j = 1; j < V; ++j)
      if (scores(i, j) > bv) {  // strict: ties keep the smallest index
        bv = scores(i, j);
        best = j;
      }
    tokens[static_cast<size_t>(i)] = best;
  }
  return tokens;
}

int64_t tokenize(std::span<const float> patch, const Vocabulary& vocab) {
  Tensor one = Tensor::from({1, static_cast<int64_t>(patch.size())}, patch);
  return tokenize_rows(one, vocab)[0];
}

std::vector<int64_t> tokenize_image(const Image& img, const Vocabulary& vocab, int patch_size) {
  return tokenize_rows(patchify(img, patch_size).patches, vocab);
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) raise(ErrKind::Data, "truncated vocabulary file: " + path);
  return v;
}

}  // namespace

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrKind::Io, "cannot write vocabulary: " + path);
  out.write("PVOC", 4);
  put<uint32_t>(out, 1);
  put<uint32_t>(out, static_cast<uint32_t>(vocab.kind));
  put<uint32_t>(out, vocab.center ? 1 : 0);
  put<uint64_t>(out, static_cast<uint64_t>(vocab.V));
  put<uint64_t>(out, static_cast<uint64_t>(vocab.d));
  put<uint64_t>(out, vocab.seed);
  auto data = vocab.vectors.f32();
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) raise(ErrKind::Io, "short write: " + path);
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrKind::Data, "cannot open vocabulary: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PVOC", 4) != 0) raise(ErrKind::Data, "not a vocabulary file: " + path);
  uint32_t version = get<uint32_t>(in, path);
  if (version != 1) raise(ErrKind::Data, "unsupported vocabulary version " + std::to_string(version) + ": " + path);
  uint32_t kind = get<uint32_t>(in, path);
  if (kind > 2) raise(ErrKind::Data, "bad vocabulary kind: " + path);
  uint32_t center = get<uint32_t>(in, path);
  int64_t V = static_cast<int64_t>(get<uint64_t>(in, path));
  int64_t d = static_cast<int64_t>(get<uint64_t>(in, path));
  uint64_t seed = get<uint64_t>(in, path);
  if (V < 2 || d < 1) raise(ErrKind::Data, "bad vocabulary dimensions: " + path);
  Vocabulary vocab{static_cast<VocabKind>(kind), V, d, seed, center != 0, Tensor::zeros({V, d}, DType::F32)};
  auto buf = vocab.vectors.f32_mut();
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in || in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    raise(ErrKind::Data, "truncated vocabulary file: " + path);
  return vocab;
}

}  // namespace mimlab
