#include "wpmixer/data.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wpmixer/errors.hpp"

namespace wpmixer {

namespace {

// Splits one CSV line on commas; no quoting, matching the ETT file format.
std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (true) {
    size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

const char* part_name(Part p) {
  switch (p) {
    case Part::train: return "train";
    case Part::val: return "val";
    default: return "test";
  }
}

SeriesTable load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open data file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file, expected a header row");
  line = strip_cr(line);
  std::vector<std::string> header = split_fields(line);
  if (header.size() < 2)
    throw DataError(path + ": header must contain a timestamp column and at least one value column");

  SeriesTable table;
  table.columns.assign(header.begin() + 1, header.end());
  const size_t n_fields = header.size();
  const int64_t C = static_cast<int64_t>(table.columns.size());

  std::vector<double> buf;
  int64_t row = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;  // tolerate a trailing blank line
    std::vector<std::string> cells = split_fields(line);
    if (cells.size() != n_fields)
      throw DataError(path + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " fields, expected " +
                      std::to_string(n_fields));
    if (!table.timestamps.empty() && cells[0] < table.timestamps.back())
      throw DataError(path + ": timestamps not nondecreasing at row " + std::to_string(row));
    table.timestamps.push_back(cells[0]);
    for (size_t c = 1; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      const std::string& col = table.columns[c - 1];
      if (cell.empty())
        throw DataError(path + ": missing value at row " + std::to_string(row) + " column '" +
                        col + "'");
      errno = 0;
      char* end = nullptr;
      double v = std::strtod(cell.c_str(), &end);
      if (errno != 0 || end != cell.c_str() + cell.size())
        throw DataError(path + ": non-numeric cell '" + cell + "' at row " +
                        std::to_string(row) + " column '" + col + "'");
      if (!std::isfinite(v))
        throw DataError(path + ": non-finite value at row " + std::to_string(row) +
                        " column '" + col + "'");
      buf.push_back(v);
    }
  }
  if (in.bad()) throw IoError("failed reading data file '" + path + "'");
  const int64_t n = static_cast<int64_t>(table.timestamps.size());
  if (n == 0) throw DataError(path + ": no data rows");
  table.values = Tensor({n, C});
  std::memcpy(table.values.data(), buf.data(), buf.size() * sizeof(double));
  return table;
}

Standardization train_stats(const SeriesTable& table, int64_t n_train) {
  const int64_t n = table.rows(), C = table.channels();
  if (n_train < 2 || n_train > n)
    throw DataError("training split of " + std::to_string(n_train) +
                    " rows is not usable (table has " + std::to_string(n) + " rows)");
  Standardization st{Tensor({C}), Tensor({C})};
  const double* v = table.values.data();
  for (int64_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (int64_t r = 0; r < n_train; ++r) mean += v[r * C + c];
    mean /= static_cast<double>(n_train);
    double var = 0.0;
    for (int64_t r = 0; r < n_train; ++r) {
      double d = v[r * C + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n_train);
    if (var == 0.0)
      throw DataError("column '" + table.columns[static_cast<size_t>(c)] +
                      "' has zero variance over the training split");
    st.mean.data()[c] = mean;
    st.std.data()[c] = std::sqrt(var);
  }
  return st;
}

void apply_standardization(SeriesTable& table, const Standardization& st) {
  const int64_t n = table.rows(), C = table.channels();
  if (st.mean.size() != C || st.std.size() != C)
    throw DimensionError("standardization stats have " + std::to_string(st.mean.size()) +
                         " channels, table has " + std::to_string(C));
  double* v = table.values.data();
  const double* mu = st.mean.data();
  const double* sd = st.std.data();
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < C; ++c) v[r * C + c] = (v[r * C + c] - mu[c]) / sd[c];
}

std::vector<WindowIndex> window_indices(int64_t n_rows, const SplitSpec& split, int64_t lookback,
                                        int64_t horizon, Part part) {
  if (lookback < 1 || horizon < 1)
    throw ConfigError("lookback and horizon must be positive for windowing");
  if (split.n_train + split.n_val + split.n_test > n_rows)
    throw DataError("splits need " + std::to_string(split.n_train + split.n_val + split.n_test) +
                    " rows but the table has " + std::to_string(n_rows));

  int64_t part_begin = 0, part_len = 0;
  switch (part) {
    case Part::train:
      part_begin = 0;
      part_len = split.n_train;
      break;
    case Part::val:
      part_begin = split.n_train;
      part_len = split.n_val;
      break;
    case Part::test:
      part_begin = split.n_train + split.n_val;
      part_len = split.n_test;
      break;
  }

  // first/last admissible input start
  int64_t first = 0, last = 0;
  if (part == Part::train) {
    first = 0;
    last = split.n_train - lookback - horizon;
  } else if (split.strict) {
    first = part_begin;
    last = part_begin + part_len - lookback - horizon;
  } else {
    // targets lie inside the part; inputs may reach back across the boundary
    first = part_begin - lookback;
    last = part_begin + part_len - horizon - lookback;
  }
  if (last < first)
    throw DataError(std::string(part_name(part)) + " split yields no windows (lookback " +
                    std::to_string(lookback) + ", horizon " + std::to_string(horizon) +
                    ", part length " + std::to_string(part_len) + ")");
  if (first < 0)
    throw DataError(std::string(part_name(part)) +
                    " split: input windows would reach before the first row; reduce lookback "
                    "or enlarge earlier splits");

  std::vector<WindowIndex> out;
  out.reserve(static_cast<size_t>(last - first + 1));
  for (int64_t s = first; s <= last; ++s) out.push_back(WindowIndex{s});
  return out;
}

void gather_windows(const SeriesTable& table, const std::vector<WindowIndex>& indices,
                    size_t from, size_t count, int64_t lookback, int64_t horizon, Tensor* x,
                    Tensor* y) {
  if (from + count > indices.size())
    throw ContractError("gather_windows: slice past the end of the index list");
  const int64_t B = static_cast<int64_t>(count);
  const int64_t C = table.channels();
  const int64_t n = table.rows();
  if (x->shape() != std::vector<int64_t>{B, C, lookback}) *x = Tensor({B, C, lookback});
  if (y->shape() != std::vector<int64_t>{B, C, horizon}) *y = Tensor({B, C, horizon});
  const double* v = table.values.data();
  double* xp = x->data();
  double* yp = y->data();
  for (int64_t b = 0; b < B; ++b) {
    const int64_t s = indices[from + static_cast<size_t>(b)].input_begin;
    if (s < 0 || s + lookback + horizon > n)
      throw ContractError("gather_windows: window [" + std::to_string(s) + ", " +
                          std::to_string(s + lookback + horizon) + ") outside table of " +
                          std::to_string(n) + " rows");
    for (int64_t c = 0; c < C; ++c) {
      double* xrow = xp + (b * C + c) * lookback;
      for (int64_t i = 0; i < lookback; ++i) xrow[i] = v[(s + i) * C + c];
      double* yrow = yp + (b * C + c) * horizon;
      for (int64_t i = 0; i < horizon; ++i) yrow[i] = v[(s + lookback + i) * C + c];
    }
  }
}

void MetricAccumulator::add(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("metric inputs disagree: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  const double* p = pred.data();
  const double* t = target.data();
  const int64_t n = pred.size();
  for (int64_t i = 0; i < n; ++i) {
    double e = p[i] - t[i];
    sum_sq += e * e;
    sum_abs += std::fabs(e);
  }
  count += n;
}

double MetricAccumulator::mse() const {
  if (count == 0) throw ContractError("metric accumulator is empty");
  return sum_sq / static_cast<double>(count);
}

double MetricAccumulator::mae() const {
  if (count == 0) throw ContractError("metric accumulator is empty");
  return sum_abs / static_cast<double>(count);
}

std::pair<double, double> mse_mae(const Tensor& pred, const Tensor& target) {
  MetricAccumulator acc;
  acc.add(pred, target);
  return {acc.mse(), acc.mae()};
}

}  // namespace wpmixer
