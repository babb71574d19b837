#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sardet/error.hpp"
#include "sardet/rng.hpp"

namespace sardet {

// Dense 4-axis extent (batch, channel, height, width).
struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    return cat(n, "x", c, "x", h, "x", w);
  }
};

// Dense row-major NCHW tensor. `grad` is empty unless the tensor is a
// trainable parameter (requires_grad), in which case it matches data length.
template <class Real>
struct TensorT {
  Shape4 shape{};
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;

  TensorT() = default;
  explicit TensorT(Shape4 s, Real fill = Real(0))
      : shape(s), data(static_cast<std::size_t>(s.numel()), fill) {
    require(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0,
            "tensor shape has a negative extent: ", s.str());
  }

  static TensorT zeros(Shape4 s) { return TensorT(s); }

  static TensorT full(Shape4 s, Real v) { return TensorT(s, v); }

  static TensorT uniform(Shape4 s, Rng& rng, Real lo, Real hi) {
    TensorT t(s);
    for (auto& v : t.data) v = static_cast<Real>(rng.uniform(lo, hi));
    return t;
  }

  std::int64_t numel() const { return shape.numel(); }

  std::int64_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::int64_t>(n) * shape.c + c) * shape.h + y) * shape.w + x;
  }
  Real& at(int n, int c, int y, int x) { return data[index(n, c, y, x)]; }
  Real at(int n, int c, int y, int x) const { return data[index(n, c, y, x)]; }

  void mark_param() {
    requires_grad = true;
    grad.assign(data.size(), Real(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using Tensor = TensorT<float>;

template <class Real>
Real max_abs(const std::vector<Real>& v) {
  Real m = 0;
  for (Real x : v) m = std::max(m, std::abs(x));
  return m;
}

template <class Real>
Real max_abs_diff(const std::vector<Real>& a, const std::vector<Real>& b) {
  require(a.size() == b.size(), "max_abs_diff: length mismatch ", a.size(), " vs ", b.size());
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// max |a-b| / max(max|a|, max|b|, floor): the relative error used by every
// gradient and transform tolerance in the test suites.
template <class Real>
double relative_error(const std::vector<Real>& a, const std::vector<Real>& b,
                      double floor = 1e-6) {
  double scale = std::max({static_cast<double>(max_abs(a)),
                           static_cast<double>(max_abs(b)), floor});
  return static_cast<double>(max_abs_diff(a, b)) / scale;
}

}  // namespace sardet
