#include "wpmixer/tensor.hpp"

#include <cmath>
#include <sstream>

namespace wpmixer {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  buf_ = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

int64_t Tensor::offset_of(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw DimensionError("index rank " + std::to_string(idx.size()) +
                         " vs tensor rank " + std::to_string(rank()));
  int64_t off = 0;
  int axis = 0;
  for (int64_t i : idx) {
    int64_t extent = shape_[static_cast<size_t>(axis)];
    if (i < 0 || i >= extent)
      throw DimensionError("index " + std::to_string(i) + " out of range for axis " +
                           std::to_string(axis) + " of shape " + shape_str(shape_));
    off = off * extent + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
  return (*buf_)[static_cast<size_t>(offset_of(idx))];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return (*buf_)[static_cast<size_t>(offset_of(idx))];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (buf_) t.buf_ = std::make_shared<std::vector<double>>(*buf_);
  return t;
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
  Tensor t;
  t.shape_ = std::move(s);
  t.buf_ = buf_;
  return t;
}

void Tensor::fill(double v) {
  for (double& x : *buf_) x = v;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double worst = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(pa[i] - pb[i]));
  return worst;
}

bool allclose(const Tensor& a, const Tensor& b, double atol, double rtol) {
  if (!a.same_shape(b)) return false;
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i)
    if (std::fabs(pa[i] - pb[i]) > atol + rtol * std::fabs(pb[i])) return false;
  return true;
}

}  // namespace wpmixer
