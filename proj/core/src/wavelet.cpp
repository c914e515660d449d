#include "wpmixer/wavelet.hpp"

#include <cmath>
#include <cstring>

#include "wpmixer/errors.hpp"
#include "wpmixer/rng.hpp"

namespace wpmixer {

namespace {
#include "wavelet_coeffs.inc"

constexpr size_t kNumFilters = sizeof(kRawFilters) / sizeof(kRawFilters[0]);
}  // namespace

const std::vector<std::string>& supported_wavelets() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (size_t i = 0; i < kNumFilters; ++i) v.emplace_back(kRawFilters[i].name);
    return v;
  }();
  return names;
}

FilterBank filter_bank(const std::string& name) {
  for (size_t i = 0; i < kNumFilters; ++i) {
    const RawFilter& rf = kRawFilters[i];
    if (name == rf.name) {
      FilterBank fb;
      fb.name = rf.name;
      fb.dec_lo.assign(rf.dec_lo, rf.dec_lo + rf.length);
      fb.dec_hi.assign(rf.dec_hi, rf.dec_hi + rf.length);
      fb.rec_lo.assign(rf.rec_lo, rf.rec_lo + rf.length);
      fb.rec_hi.assign(rf.rec_hi, rf.rec_hi + rf.length);
      fb.vanishing_moments = rf.vanishing_moments;
      fb.orthogonal = rf.orthogonal;
      return fb;
    }
  }
  std::string known;
  for (size_t i = 0; i < kNumFilters; ++i) {
    if (i) known += ", ";
    known += kRawFilters[i].name;
  }
  throw ConfigError("unknown wavelet '" + name + "' (supported: " + known + ")");
}

namespace {

// Plain single-level transform pair used only by the self-check probe.
std::vector<double> analyze(const std::vector<double>& x, const std::vector<double>& f) {
  const int64_t L = static_cast<int64_t>(x.size());
  const int64_t F = static_cast<int64_t>(f.size());
  const int64_t Lc = (L + F - 1) / 2;
  std::vector<double> y(static_cast<size_t>(Lc), 0.0);
  for (int64_t i = 0; i < Lc; ++i) {
    const int64_t center = 2 * i + 1;
    double acc = 0.0;
    for (int64_t j = 0; j < F; ++j) {
      const int64_t src = center - j;
      if (src >= 0 && src < L) acc += f[static_cast<size_t>(j)] * x[static_cast<size_t>(src)];
    }
    y[static_cast<size_t>(i)] = acc;
  }
  return y;
}

std::vector<double> synthesize(const std::vector<double>& a, const std::vector<double>& d,
                               const std::vector<double>& rlo, const std::vector<double>& rhi,
                               int64_t target) {
  const int64_t Lc = static_cast<int64_t>(a.size());
  const int64_t F = static_cast<int64_t>(rlo.size());
  std::vector<double> full(static_cast<size_t>(2 * Lc + F - 2), 0.0);
  for (int64_t i = 0; i < Lc; ++i)
    for (int64_t j = 0; j < F; ++j)
      full[static_cast<size_t>(2 * i + j)] +=
          a[static_cast<size_t>(i)] * rlo[static_cast<size_t>(j)] +
          d[static_cast<size_t>(i)] * rhi[static_cast<size_t>(j)];
  return {full.begin() + (F - 2), full.begin() + (F - 2) + target};
}

}  // namespace

void verify_filter_bank(const FilterBank& fb) {
  auto fail = [&](const std::string& what) {
    throw NumericError("filter table check failed for wavelet '" + fb.name + "': " + what);
  };
  const size_t F = fb.dec_lo.size();
  if (F < 2 || F % 2 != 0) fail("filter length must be even and >= 2");
  if (fb.dec_hi.size() != F || fb.rec_lo.size() != F || fb.rec_hi.size() != F)
    fail("filter lengths disagree");

  const double sqrt2 = std::sqrt(2.0);
  double dc_dec = 0.0, dc_rec = 0.0, norm = 0.0;
  for (size_t k = 0; k < F; ++k) {
    dc_dec += fb.dec_lo[k];
    dc_rec += fb.rec_lo[k];
    norm += fb.dec_lo[k] * fb.dec_lo[k];
  }
  if (std::fabs(dc_dec - sqrt2) > 1e-12) fail("low-pass DC gain != sqrt(2)");
  if (std::fabs(dc_rec - sqrt2) > 1e-12) fail("reconstruction low-pass DC gain != sqrt(2)");
  if (fb.orthogonal && std::fabs(norm - 1.0) > 1e-12) fail("low-pass filter is not unit norm");

  for (size_t k = 0; k < F; ++k) {
    const double sgn = (k % 2 == 0) ? 1.0 : -1.0;
    if (std::fabs(fb.dec_hi[k] + sgn * fb.rec_lo[k]) > 1e-12)
      fail("quadrature-mirror relation between dec_hi and rec_lo violated");
    if (std::fabs(fb.rec_hi[k] - sgn * fb.dec_lo[k]) > 1e-12)
      fail("quadrature-mirror relation between rec_hi and dec_lo violated");
  }

  // Probe round trip: deterministic pseudo-random signal, one level.
  const int64_t L = static_cast<int64_t>(4 * F + 5);
  Rng rng(0x5eedULL);
  std::vector<double> x(static_cast<size_t>(L));
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  std::vector<double> a = analyze(x, fb.dec_lo);
  std::vector<double> d = analyze(x, fb.dec_hi);
  std::vector<double> back = synthesize(a, d, fb.rec_lo, fb.rec_hi, L);
  for (int64_t i = 0; i < L; ++i) {
    if (std::fabs(back[static_cast<size_t>(i)] - x[static_cast<size_t>(i)]) > 1e-10)
      fail("single-level round trip exceeds 1e-10");
  }
}

int64_t coeff_len(int64_t len, int64_t filter_len) {
  if (len < 1) throw ContractError("coeff_len requires length >= 1; got " + std::to_string(len));
  if (filter_len < 2)
    throw ContractError("coeff_len requires filter length >= 2; got " +
                        std::to_string(filter_len));
  return (len + filter_len - 1) / 2;
}

int max_feasible_level(int64_t len, int64_t filter_len) {
  int m = 0;
  while (len >= filter_len) {
    len = coeff_len(len, filter_len);
    ++m;
  }
  return m;
}

namespace {
void check_depth(int64_t len, const FilterBank& fb, int m) {
  if (m < 1) throw ConfigError("decomposition level must be >= 1; got " + std::to_string(m));
  const int feasible = max_feasible_level(len, fb.length());
  if (m > feasible)
    throw ConfigError("decomposition level " + std::to_string(m) + " too deep for length " +
                      std::to_string(len) + " with " + fb.name + " (filter length " +
                      std::to_string(fb.length()) + "): maximum feasible level is " +
                      std::to_string(feasible));
}
}  // namespace

std::vector<int64_t> decomposed_lengths(int64_t len, const FilterBank& fb, int m) {
  check_depth(len, fb, m);
  std::vector<int64_t> per_level(static_cast<size_t>(m));
  int64_t cur = len;
  for (int i = 0; i < m; ++i) {
    cur = coeff_len(cur, fb.length());
    per_level[static_cast<size_t>(i)] = cur;  // L_{i+1}
  }
  std::vector<int64_t> out;
  out.push_back(per_level[static_cast<size_t>(m - 1)]);            // A_m
  for (int i = m - 1; i >= 0; --i) out.push_back(per_level[static_cast<size_t>(i)]);  // D_m..D_1
  return out;
}

std::vector<Val> decompose(Tape& t, Val x, const FilterBank& fb, int m) {
  const Tensor& tx = t.val(x);
  if (tx.rank() < 1 || tx.size() == 0) throw ContractError("decompose on empty input");
  check_depth(tx.dim(tx.rank() - 1), fb, m);
  std::vector<Val> details;
  Val approx = x;
  for (int i = 0; i < m; ++i) {
    auto [a, d] = t.analysis_conv(approx, fb.dec_lo, fb.dec_hi);
    details.push_back(d);
    approx = a;
  }
  std::vector<Val> out;
  out.push_back(approx);
  for (int i = m - 1; i >= 0; --i) out.push_back(details[static_cast<size_t>(i)]);
  return out;
}

Val reconstruct(Tape& t, const std::vector<Val>& coeffs, const FilterBank& fb,
                int64_t target_len) {
  if (coeffs.size() < 2)
    throw ContractError("reconstruct needs an approximation plus at least one detail level");
  const int m = static_cast<int>(coeffs.size()) - 1;
  std::vector<int64_t> lens(static_cast<size_t>(m) + 1);  // lens[i] = L_i, lens[0] = target
  lens[0] = target_len;
  for (int i = 1; i <= m; ++i)
    lens[static_cast<size_t>(i)] = coeff_len(lens[static_cast<size_t>(i - 1)], fb.length());
  auto last_dim = [&](Val v) {
    const Tensor& tv = t.val(v);
    return tv.dim(tv.rank() - 1);
  };
  if (last_dim(coeffs[0]) != lens[static_cast<size_t>(m)])
    throw ContractError("inconsistent level lengths: approximation has length " +
                        std::to_string(last_dim(coeffs[0])) + ", expected " +
                        std::to_string(lens[static_cast<size_t>(m)]) + " for target " +
                        std::to_string(target_len));
  for (int i = 1; i <= m; ++i) {
    const int lvl = m + 1 - i;  // coeffs[i] holds D_lvl
    if (last_dim(coeffs[static_cast<size_t>(i)]) != lens[static_cast<size_t>(lvl)])
      throw ContractError("inconsistent level lengths: detail level " + std::to_string(lvl) +
                          " has length " +
                          std::to_string(last_dim(coeffs[static_cast<size_t>(i)])) +
                          ", expected " + std::to_string(lens[static_cast<size_t>(lvl)]));
  }
  Val acc = coeffs[0];
  for (int lvl = m; lvl >= 1; --lvl) {
    Val d = coeffs[static_cast<size_t>(m + 1 - lvl)];
    acc = t.synthesis_conv(acc, d, fb.rec_lo, fb.rec_hi, lens[static_cast<size_t>(lvl - 1)]);
  }
  return acc;
}

}  // namespace wpmixer
