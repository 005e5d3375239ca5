#include "divtrain/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace divtrain {

Tensor sign(const Tensor& t) {
  Tensor out(t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v = t[i];
    out[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  }
  return out;
}

Tensor clip(const Tensor& t, double lo, double hi) {
  Tensor out(t.shape());
  for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = std::min(hi, std::max(lo, t[i]));
  return out;
}

Tensor axpy(const Tensor& a, double s, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("axpy: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + s * b[i];
  return out;
}

Tensor project_linf(const Tensor& x, const Tensor& center, double eps) {
  if (!x.same_shape(center))
    throw ShapeError("project_linf: shape mismatch " + x.shape_str() + " vs " + center.shape_str());
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    out[i] = std::min(center[i] + eps, std::max(center[i] - eps, x[i]));
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace divtrain
