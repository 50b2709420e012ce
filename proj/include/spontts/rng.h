#ifndef SPONTTS_RNG_H_
#define SPONTTS_RNG_H_

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace spontts {

// Bit-level mixing used for seed derivation and content hashing.
inline uint64_t SplitMix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t HashCombine(uint64_t a, uint64_t b) {
  return SplitMix64(a ^ SplitMix64(b + 0x632BE59BD9B4E019ULL));
}

// Maps a hash to [0, 1) using the top 53 bits.
inline double HashToUnit(uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Seeded generator whose draws do not depend on the standard library's
// distribution implementations, so streams are identical across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(SplitMix64(seed)) {}

  double Uniform() { return HashToUnit(engine_()); }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = Uniform();
    while (u1 <= 0.0) u1 = Uniform();
    const double u2 = Uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  bool Bernoulli(double p) { return Uniform() < p; }

  // Fisher-Yates with this generator's own draws.
  template <typename T>
  void Shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[Below(i)]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace spontts

#endif  // SPONTTS_RNG_H_
