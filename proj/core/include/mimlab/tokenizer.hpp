#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimlab/data.hpp"
#include "mimlab/rng.hpp"
#include "mimlab/tensor.hpp"

namespace mimlab {

enum class VocabKind { RandomProjection, RandomPatches, KMeans };

VocabKind vocab_kind_from_name(const std::string& name);
const char* vocab_kind_name(VocabKind k);

// Codebook of V unit vectors in patch space. Tokenization is the argmax of
// the dot product with each row (equals cosine similarity up to the patch's
// own norm); ties resolve to the smallest index.
struct Vocabulary {
  VocabKind kind = VocabKind::RandomProjection;
  int64_t V = 0;
  int64_t d = 0;
  uint64_t seed = 0;
  bool center = false;  // subtract per-patch mean before matching
  Tensor vectors;       // [V, d] f32, unit rows, pairwise distinct
};

// V rows of i.i.d. uniform [-1,1] components, L2-normalized.
Vocabulary build_random_projection(int64_t V, int64_t d, uint64_t seed, bool center = false);

// V patches drawn uniformly over all (image, grid position) pairs of the
// dataset, flattened and normalized; content duplicates redrawn.
Vocabulary build_random_patches(const LabeledDataset& ds, int64_t V, int patch_size, uint64_t seed,
                                bool center = false);

struct KMeansTrace {
  // objective[i] = sum of squared distances after the i-th assignment pass
  std::vector<double> objective;
};

// Lloyd iterations from explicit initial centroids; stops after max_iters or
// when the relative objective improvement drops below tol. Empty clusters
// reseed to the point farthest from its assigned centroid.
Tensor kmeans_lloyd(const Tensor& points, Tensor centroids, int max_iters, double tol, KMeansTrace* trace = nullptr);

// Squared-distance-weighted (k-means++) initialization.
Tensor kmeans_pp_init(const Tensor& points, int64_t k, Rng& rng);

// Samples up to sample_budget patches, clusters them, normalizes centroids.
Vocabulary build_kmeans(const LabeledDataset& ds, int64_t V, int patch_size, int64_t sample_budget, int max_iters,
                        uint64_t seed, bool center = false, KMeansTrace* trace = nullptr);

int64_t tokenize(std::span<const float> patch, const Vocabulary& vocab);
std::vector<int64_t> tokenize_rows(const Tensor& patches, const Vocabulary& vocab);
std::vector<int64_t> tokenize_image(const Image& img, const Vocabulary& vocab, int patch_size);

// File layout: "PVOC", u32 version, u32 kind, u32 center, u64 V, u64 d,
// u64 seed, then V*d little-endian f32 row-major. Round-trips bit-exactly.
void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace mimlab
