#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "wsed/common.hpp"

namespace wsed {

// Dense row-major n-d array of doubles with a paired gradient buffer of the
// same size. This is the currency of the differentiable layer stack. The
// gradient buffer is allocated on first use; plain activation tensors never
// pay for one.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape)
      : shape_(std::move(shape)), values_(count_(shape_), 0.0) {}

  Tensor(std::initializer_list<size_t> shape)
      : Tensor(std::vector<size_t>(shape)) {}

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_.at(i); }
  size_t size() const { return values_.size(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double* grad() {
    ensure_grad_();
    return grad_.data();
  }
  const double* grad() const {
    ensure_grad_();
    return grad_.data();
  }

  double& v(size_t i) { return values_[i]; }
  double v(size_t i) const { return values_[i]; }
  double& g(size_t i) {
    ensure_grad_();
    return grad_[i];
  }
  double g(size_t i) const {
    ensure_grad_();
    return grad_[i];
  }

  void fill(double x) { values_.assign(values_.size(), x); }
  void zero_grad() { grad_.assign(values_.size(), 0.0); }

  // Reinterprets the flat buffer under a new shape with equal element count.
  Tensor reshaped(std::vector<size_t> shape) const {
    if (count_(shape) != size())
      throw ShapeError("reshape: element count mismatch");
    Tensor out;
    out.shape_ = std::move(shape);
    out.values_ = values_;
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool all_finite() const {
    for (double x : values_)
      if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  static size_t count_(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }

  void ensure_grad_() const {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  }

  std::vector<size_t> shape_;
  std::vector<double> values_;
  mutable std::vector<double> grad_;
};

inline void require_shape(const Tensor& t, const std::vector<size_t>& shape,
                          const char* what) {
  if (t.shape() != shape)
    throw ShapeError(std::string(what) + ": got " + t.shape_str());
}

}  // namespace wsed
