#include "wpmixer/baselines.hpp"

#include <algorithm>
#include <vector>

#include "blas_api.hpp"
#include "wpmixer/errors.hpp"

namespace wpmixer::blas {

void lstsq(int rows, int cols, int nrhs, const double* A, const double* B, double* X) {
  if (rows < cols) throw ContractError("lstsq needs rows >= cols");
  // Row-major A (rows x cols) is, byte-for-byte, the column-major cols x rows
  // matrix A^T; dgels with TRANS='T' then minimizes ||A X - B|| directly.
  std::vector<double> a(A, A + static_cast<size_t>(rows) * cols);
  std::vector<double> b(static_cast<size_t>(rows) * nrhs);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < nrhs; ++j) b[static_cast<size_t>(j) * rows + i] = B[static_cast<size_t>(i) * nrhs + j];

  const char trans = 'T';
  const int m = cols, n = rows, lda = cols, ldb = rows;
  int info = 0, lwork = -1;
  double wsize = 0.0;
  dgels_(&trans, &m, &n, &nrhs, a.data(), &lda, b.data(), &ldb, &wsize, &lwork, &info);
  if (info != 0) throw NumericError("dgels workspace query failed (info=" + std::to_string(info) + ")");
  lwork = static_cast<int>(wsize);
  std::vector<double> work(static_cast<size_t>(lwork));
  dgels_(&trans, &m, &n, &nrhs, a.data(), &lda, b.data(), &ldb, work.data(), &lwork, &info);
  if (info != 0)
    throw NumericError("least squares solve failed (dgels info=" + std::to_string(info) + ")");
  for (int i = 0; i < cols; ++i)
    for (int j = 0; j < nrhs; ++j) X[static_cast<size_t>(i) * nrhs + j] = b[static_cast<size_t>(j) * rows + i];
}

}  // namespace wpmixer::blas

namespace wpmixer {

Tensor persistence_forecast(const Tensor& x, int64_t horizon) {
  if (x.shape().size() != 3) throw DimensionError("persistence expects (B, C, L) input");
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (horizon < 1) throw ContractError("persistence horizon must be positive");
  Tensor out({B, C, horizon});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t r = 0; r < B * C; ++r) {
    const double last = px[r * L + L - 1];
    std::fill(po + r * horizon, po + (r + 1) * horizon, last);
  }
  return out;
}

LinearBaseline fit_linear_baseline(const SeriesTable& table, const SplitSpec& split,
                                   int64_t lookback, int64_t horizon) {
  std::vector<WindowIndex> idx =
      window_indices(table.rows(), split, lookback, horizon, Part::train);
  const int64_t C = table.channels();
  const int64_t rows = static_cast<int64_t>(idx.size()) * C;
  const int64_t cols = lookback + 1;
  if (rows < cols)
    throw DataError("linear baseline needs at least " + std::to_string(cols) +
                    " pooled train windows, got " + std::to_string(rows));

  std::vector<double> A(static_cast<size_t>(rows) * cols);
  std::vector<double> Y(static_cast<size_t>(rows) * horizon);
  const double* v = table.values.data();
  int64_t r = 0;
  for (const WindowIndex& w : idx) {
    for (int64_t c = 0; c < C; ++c, ++r) {
      double* arow = A.data() + static_cast<size_t>(r) * cols;
      for (int64_t i = 0; i < lookback; ++i) arow[i] = v[(w.input_begin + i) * C + c];
      arow[lookback] = 1.0;
      double* yrow = Y.data() + static_cast<size_t>(r) * horizon;
      for (int64_t i = 0; i < horizon; ++i)
        yrow[i] = v[(w.input_begin + lookback + i) * C + c];
    }
  }

  LinearBaseline lb{lookback, horizon, Tensor({cols, horizon})};
  blas::lstsq(static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(horizon),
              A.data(), Y.data(), lb.weights.data());
  return lb;
}

Tensor linear_forecast(const LinearBaseline& lb, const Tensor& x) {
  if (x.shape().size() != 3) throw DimensionError("linear baseline expects (B, C, L) input");
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (L != lb.lookback)
    throw DimensionError("linear baseline was fit for lookback " + std::to_string(lb.lookback) +
                         ", got " + std::to_string(L));
  const int64_t rows = B * C, cols = L + 1;
  std::vector<double> A(static_cast<size_t>(rows) * cols);
  const double* px = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    double* arow = A.data() + static_cast<size_t>(r) * cols;
    std::copy(px + r * L, px + (r + 1) * L, arow);
    arow[L] = 1.0;
  }
  Tensor out({B, C, lb.horizon});
  blas::gemm_rm(false, false, static_cast<int>(rows), static_cast<int>(lb.horizon),
                static_cast<int>(cols), 1.0, A.data(), lb.weights.data(), 0.0, out.data());
  return out;
}

}  // namespace wpmixer
