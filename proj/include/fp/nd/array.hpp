#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fp/common/error.hpp"

namespace fp::nd {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major array of 64-bit floats. The only value type the compute
/// core works with; shapes are explicit and never broadcast implicitly.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s) : shape(std::move(s)), data(check_dims(shape), 0.0) {}
  Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw ShapeError("Array: data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }
  Array(Shape s, double fill) : shape(std::move(s)), data(check_dims(shape), fill) {}

  static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  /// Row-major offset for a 2-d array.
  double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  /// Row-major offset for a 3-d array.
  double& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  double at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static size_t check_dims(const Shape& s) {
    if (s.empty()) throw ShapeError("Array: rank-0 shapes are not supported");
    for (int d : s)
      if (d < 1) throw ShapeError("Array: dims must be >= 1, got " + shape_str(s));
    return static_cast<size_t>(numel_of(s));
  }
};

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

// ---- plain (non-tape) array math used by samplers, optimizers, data prep ----

inline Array zeros_like(const Array& a) { return Array(a.shape); }

/// y += a * x
inline void axpy(double a, const Array& x, Array& y) {
  require_same_shape(x, y, "axpy");
  const size_t n = x.data.size();
  for (size_t i = 0; i < n; ++i) y.data[i] += a * x.data[i];
}

inline Array add(const Array& a, const Array& b) {
  require_same_shape(a, b, "add");
  Array r = a;
  for (size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
  return r;
}

inline Array sub(const Array& a, const Array& b) {
  require_same_shape(a, b, "sub");
  Array r = a;
  for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
  return r;
}

inline Array scaled(const Array& a, double s) {
  Array r = a;
  for (double& v : r.data) v *= s;
  return r;
}

/// t*a + (1-t)*b
inline Array lerp(const Array& a, const Array& b, double t) {
  require_same_shape(a, b, "lerp");
  Array r = a;
  for (size_t i = 0; i < r.data.size(); ++i) r.data[i] = t * a.data[i] + (1.0 - t) * b.data[i];
  return r;
}

inline double max_abs(const Array& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace fp::nd
