#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "wpmixer/errors.hpp"

namespace wpmixer {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense n-dimensional array of 64-bit floats, contiguous row-major.
// Copies are shallow (shared buffer); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-initialized
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return buf_ != nullptr; }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return defined() ? static_cast<int64_t>(buf_->size()) : 0; }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }

  // Checked multi-index access; convenience for tests and small code paths.
  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  Tensor clone() const;
  // Same buffer, new shape; element count must match.
  Tensor reshaped(Shape s) const;
  void fill(double v);

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  int64_t offset_of(std::initializer_list<int64_t> idx) const;
  Shape shape_;
  std::shared_ptr<std::vector<double>> buf_;
};

// max_i |a_i - b_i|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
// True when |a_i - b_i| <= atol + rtol*|b_i| for every element.
bool allclose(const Tensor& a, const Tensor& b, double atol = 1e-12, double rtol = 0.0);

}  // namespace wpmixer
