#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "wpmixer/wavelet.hpp"

namespace wpmixer {

// Max absolute reconstruction error of an analyze/reconstruct round trip on a
// deterministic random signal of the given length.
double roundtrip_error(const FilterBank& fb, int64_t len, int level);

// Runs the round-trip grid (every supported wavelet x levels 1..5 x lengths
// {96, 336, 512, 1200}) and returns the worst error observed.
double roundtrip_suite(std::ostream* out = nullptr);

struct GradCheckReport {
  double worst_rel = 0.0;
  std::string worst_param;
  int64_t checked = 0;
};

// Central-difference check of every parameter gradient of the small reference
// model (2 variates, lookback 32, horizon 8, db2, level 1, patch 8/4, width 8).
GradCheckReport toy_gradient_check(double step = 1e-5);

// Round trip of the instance normalization (normalize then denormalize
// recovers the input); returns the max absolute error.
double revin_roundtrip_error();

// Filter-table verification, the three checks above, and a pass/fail line for
// each; returns false if anything fails.
bool run_selftest(std::ostream& out);

}  // namespace wpmixer
