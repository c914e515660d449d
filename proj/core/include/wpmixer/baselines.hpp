#pragma once

#include <cstdint>

#include "wpmixer/data.hpp"
#include "wpmixer/tensor.hpp"

namespace wpmixer {

// Repeats each series' last observed value across the horizon: (B,C,L) -> (B,C,T).
Tensor persistence_forecast(const Tensor& x, int64_t horizon);

// Ridgeless (ordinary least squares) linear map from a lookback window to the
// horizon, with an intercept, fit on the pooled train windows of every
// channel and shared across channels.
struct LinearBaseline {
  int64_t lookback = 0;
  int64_t horizon = 0;
  Tensor weights;  // (lookback + 1, horizon); last row is the intercept
};

LinearBaseline fit_linear_baseline(const SeriesTable& table, const SplitSpec& split,
                                   int64_t lookback, int64_t horizon);

Tensor linear_forecast(const LinearBaseline& lb, const Tensor& x);  // (B,C,L) -> (B,C,T)

}  // namespace wpmixer
