#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divtrain/error.hpp"

namespace divtrain {

// Dense row-major tensor of 64-bit floats. Values are treated as immutable
// once a tensor has been handed to the autodiff graph.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
  }

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }
  static Tensor ones(std::vector<std::int64_t> shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str());
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const { return shape_to_string(shape_); }

  static std::string shape_to_string(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

  static std::int64_t shape_numel(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (std::int64_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one dimension");
    std::int64_t n = 1;
    for (std::int64_t d : s) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(s));
      n *= d;
    }
    return n;
  }

  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

// Plain (non-graph) tensor helpers used by attacks, datasets and reports.

// sign(0) == 0.
Tensor sign(const Tensor& t);
Tensor clip(const Tensor& t, double lo, double hi);
// Elementwise a + s*b; shapes must match.
Tensor axpy(const Tensor& a, double s, const Tensor& b);
// Project each element of x onto [center-eps, center+eps].
Tensor project_linf(const Tensor& x, const Tensor& center, double eps);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace divtrain
