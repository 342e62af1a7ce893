#include "mimlab/rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "mimlab/common.hpp"

namespace mimlab {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243f6a8885a308d3ULL;
  for (uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

static uint64_t hash_str(const char* s) {
  // FNV-1a 64
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* p = s; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t mix_seed_str(uint64_t seed, const char* tag) {
  return mix_seed({seed, hash_str(tag)});
}
uint64_t mix_seed_str(uint64_t seed, const char* tag, uint64_t a) {
  return mix_seed({seed, hash_str(tag), a});
}
uint64_t mix_seed_str(uint64_t seed, const char* tag, uint64_t a, uint64_t b) {
  return mix_seed({seed, hash_str(tag), a, b});
}

double Rng::uniform() {
  // 53-bit mantissa construction; result in [0, 1)
  return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::log_uniform(double lo, double hi) {
  return std::exp(uniform(std::log(lo), std::log(hi)));
}

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) raise(ErrKind::Usage, "uniform_int: n must be positive");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v;
  do {
    v = eng_();
  } while (v >= limit);
  return static_cast<int64_t>(v % un);
}

double Rng::normal() {
  // Box-Muller, cosine branch only so the draw count per call is fixed
  double u1 = 1.0 - uniform();  // (0, 1]
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::trunc_normal(double stddev, double clip) {
  double z;
  do {
    z = normal();
  } while (std::abs(z) > clip);
  return z * stddev;
}

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
  if (k < 0 || k > n) raise(ErrKind::Usage, "sample_without_replacement: need 0 <= k <= n");
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = i + uniform_int(n - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(k));
  return idx;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> eng_;
  if (is.fail()) raise(ErrKind::Usage, "Rng::set_state: malformed state string");
}

}  // namespace mimlab
