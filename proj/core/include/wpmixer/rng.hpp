#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace wpmixer {

// Deterministic PRNG (splitmix64).  Self-contained so that streams are
// bit-reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller on own uniforms.
  double normal();
  // Unbiased integer in [0, n) by rejection.
  uint64_t below(uint64_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// One root seed fanned out into independent named streams (init, dropout,
// shuffle, ...) so toggling one consumer never perturbs the others.
struct SeedStreams {
  uint64_t root;
  // Optional index k separates per-epoch or per-branch substreams.
  Rng stream(std::string_view name, uint64_t k = 0) const;
};

}  // namespace wpmixer
