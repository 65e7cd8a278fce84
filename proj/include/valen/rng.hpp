#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace valen {

// Seedable generator with hand-rolled transforms so that streams are
// bit-reproducible across standard library implementations.
struct RngState {
  std::mt19937_64 gen;

  explicit RngState(uint64_t seed) : gen(seed) {}

  uint64_t next_u64() { return gen(); }

  // [0, 1) with 53 bits of randomness
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1)
  double uniform_pos() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  // Box-Muller; the sine partner is discarded to keep the draw count per
  // call fixed.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    return static_cast<int>(uniform() * n) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Gamma(shape, 1). Marsaglia-Tsang for shape >= 1; for shape < 1 the
  // boost z * U^(1/shape) with z ~ Gamma(shape+1, 1).
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::domain_error("gamma: shape must be positive");
    if (shape < 1.0) {
      double z = gamma(shape + 1.0);
      double u = uniform_pos();
      return z * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform_pos();
      double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }
};

// Derive a named sub-stream from a root seed (FNV-1a over the name, mixed
// with the root via splitmix64 finalization).
inline uint64_t derive_seed(uint64_t root, std::string_view stream) {
  uint64_t h = 14695981039346656037ULL;
  for (char ch : stream) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(ch));
    h *= 1099511628211ULL;
  }
  uint64_t z = root + 0x9e3779b97f4a7c15ULL * (h | 1ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline RngState derive_stream(uint64_t root, std::string_view stream) {
  return RngState(derive_seed(root, stream));
}

template <class T>
inline void shuffle_vec(std::vector<T>& v, RngState& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(v[i], v[j]);
  }
}

}  // namespace valen
