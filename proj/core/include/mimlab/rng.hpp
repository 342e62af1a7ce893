#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

namespace mimlab {

// splitmix64 step; used to combine seeds and tags into derived stream seeds.
uint64_t splitmix64(uint64_t x);

// Hash an arbitrary list of values into one seed. Order-sensitive.
uint64_t mix_seed(std::initializer_list<uint64_t> parts);
uint64_t mix_seed_str(uint64_t seed, const char* tag);
uint64_t mix_seed_str(uint64_t seed, const char* tag, uint64_t a);
uint64_t mix_seed_str(uint64_t seed, const char* tag, uint64_t a, uint64_t b);

// Deterministic random stream. Wraps std::mt19937_64 (bit-exact sequence is
// mandated by the standard) and implements its own float/normal transforms so
// draws do not depend on libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  double log_uniform(double lo, double hi);
  // [0, n); unbiased via rejection
  int64_t uniform_int(int64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // standard normal via Box-Muller; exactly two raw draws per call
  double normal();
  // normal truncated to [-clip, clip] sigmas, then scaled by stddev
  double trunc_normal(double stddev, double clip = 2.0);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  // k distinct values from [0, n), order random; partial Fisher-Yates
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 eng_;
};

}  // namespace mimlab
