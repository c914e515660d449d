#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wpmixer/tensor.hpp"

namespace wpmixer {

// A loaded CSV table: first column is an informational timestamp, the
// remaining columns are the value variates, stored as a (rows, channels)
// tensor in file order.
struct SeriesTable {
  std::vector<std::string> columns;     // value column names (timestamp excluded)
  std::vector<std::string> timestamps;  // raw first-column strings
  Tensor values;                        // (rows, channels)

  int64_t rows() const { return values.shape().empty() ? 0 : values.shape()[0]; }
  int64_t channels() const { return values.shape().size() < 2 ? 0 : values.shape()[1]; }
};

// Strict CSV reader.  Throws DataError naming the offending row (1-based file
// line, header is row 1) and column for malformed, missing, or non-finite
// cells, and for timestamps that go backwards.  Throws IoError when the file
// cannot be read.
SeriesTable load_csv(const std::string& path);

// Chronological split sizes, taken literally from the config.
struct SplitSpec {
  int64_t n_train = 0;
  int64_t n_val = 0;
  int64_t n_test = 0;
  bool strict = false;  // true: val/test inputs must not cross their split start
};

enum class Part { train, val, test };
const char* part_name(Part p);

struct Standardization {
  Tensor mean;  // (channels)
  Tensor std;   // (channels), population standard deviation
};

// Per-column mean/std over the first n_train rows only.  A column whose
// training-split variance is zero is a DataError naming the column.
Standardization train_stats(const SeriesTable& table, int64_t n_train);

// In-place (x - mean) / std over every row.
void apply_standardization(SeriesTable& table, const Standardization& st);

// Start row of the input window; the target occupies [start + L, start + L + T).
struct WindowIndex {
  int64_t input_begin = 0;
};

// Stride-1 supervised windows for one part.
//  - train: inputs and targets both inside [0, n_train)        -> n_train - L - T + 1
//  - val/test, back-reach (strict=false): targets inside the part, inputs may
//    reach back into earlier rows                               -> n_part - T + 1
//  - val/test, strict: inputs start inside the part too         -> n_part - L - T + 1
// Throws DataError when a part yields no windows or a window would leave the table.
std::vector<WindowIndex> window_indices(int64_t n_rows, const SplitSpec& split, int64_t lookback,
                                        int64_t horizon, Part part);

// Copies windows [from, from + count) of `indices` into x (count, C, L) and
// y (count, C, T), reallocating the outputs when their batch size differs.
void gather_windows(const SeriesTable& table, const std::vector<WindowIndex>& indices,
                    size_t from, size_t count, int64_t lookback, int64_t horizon, Tensor* x,
                    Tensor* y);

// Mean squared / absolute error over every element of (pred - target).
std::pair<double, double> mse_mae(const Tensor& pred, const Tensor& target);

// Streaming accumulator so split-level metrics are exact means over all
// window elements regardless of batch partitioning.
struct MetricAccumulator {
  double sum_sq = 0.0;
  double sum_abs = 0.0;
  int64_t count = 0;
  void add(const Tensor& pred, const Tensor& target);
  double mse() const;
  double mae() const;
};

}  // namespace wpmixer
