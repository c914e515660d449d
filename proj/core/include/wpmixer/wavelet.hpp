#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wpmixer/tape.hpp"

namespace wpmixer {

// Immutable four-filter bank for one wavelet family member.
struct FilterBank {
  std::string name;
  std::vector<double> dec_lo, dec_hi, rec_lo, rec_hi;
  int vanishing_moments = 0;
  bool orthogonal = false;
  int64_t length() const { return static_cast<int64_t>(dec_lo.size()); }
};

const std::vector<std::string>& supported_wavelets();

// ConfigError for names outside supported_wavelets().
FilterBank filter_bank(const std::string& name);

// Startup self-check: orthonormality (orthogonal families), DC gain,
// quadrature-mirror identities, and a single-level round trip on a probe
// signal.  Throws NumericError naming the wavelet, so a corrupted table
// fails fast.
void verify_filter_bank(const FilterBank& fb);

// Zero-padded analysis output length: floor((L + F - 1) / 2).
int64_t coeff_len(int64_t len, int64_t filter_len);

// Levels are feasible while the running approximation is at least one filter
// length long; returns the largest feasible m (0 when len < filter_len).
int max_feasible_level(int64_t len, int64_t filter_len);

// Output lengths of decompose() in its own order [A_m, D_m, ..., D_1].
// Also serves the horizon side: decomposing any length-T series gives the
// per-level target lengths.  Throws the same depth error as decompose.
std::vector<int64_t> decomposed_lengths(int64_t len, const FilterBank& fb, int m);

// Multi-level analysis on the tape over the trailing axis; retains only the
// final approximation plus every level's detail: [A_m, D_m, ..., D_1].
std::vector<Val> decompose(Tape& t, Val x, const FilterBank& fb, int m);

// Exact inverse: synthesizes level by level, trimming each step to the
// length the analysis recurrence implies for target_len.  ContractError when
// the coefficient lengths are inconsistent with (target_len, bank, m).
Val reconstruct(Tape& t, const std::vector<Val>& coeffs, const FilterBank& fb,
                int64_t target_len);

}  // namespace wpmixer
