#include "wpmixer/rng.hpp"

#include <cmath>
#include <numbers>

namespace wpmixer {

namespace {
uint64_t splitmix64(uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

uint64_t Rng::below(uint64_t n) {
  if (n <= 1) return 0;
  uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

Rng SeedStreams::stream(std::string_view name, uint64_t k) const {
  uint64_t s = root;
  uint64_t h = fnv1a(name) ^ (k * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL * (k != 0));
  // Mix the stream tag through splitmix so adjacent roots/tags decorrelate.
  uint64_t mixed = s ^ h;
  splitmix64(mixed);
  return Rng(splitmix64(mixed));
}

}  // namespace wpmixer
