#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pdpo {

// 64-bit FNV-1a. Used for seed derivation and content hashes; std::hash is
// not stable across standard library implementations.
inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

/// Seed for an independent random stream keyed by (run seed, instance id,
/// sample index, purpose tag). Streams do not depend on scheduling order.
inline std::uint64_t stream_seed(std::uint64_t run_seed, std::string_view instance_id,
                                 std::uint64_t index, std::string_view tag = {}) {
  std::uint64_t s = mix_seed(run_seed, fnv1a(instance_id));
  s = mix_seed(s, index);
  if (!tag.empty()) s = mix_seed(s, fnv1a(tag));
  return s;
}

/// Thin wrapper over mt19937_64 with portable conversions. The standard
/// distributions are implementation-defined, which would break byte-level
/// reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  int range(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pdpo
