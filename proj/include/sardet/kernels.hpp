#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sardet/tensor.hpp"

// Raw compute kernels. Forward/backward pairs live here; the autodiff tape
// wraps them into recorded operations.

namespace sardet {

template <class Real>
int conv_out_extent(int in, int pad, int k, int stride, const char* axis) {
  require(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
  int span = in + 2 * pad - k;
  require(span >= 0, "conv2d: kernel ", k, " exceeds padded input extent on axis ", axis,
          " (", in, " + 2*", pad, ")");
  require(span % stride == 0, "conv2d: non-exact output size on axis ", axis, ": (", in,
          " + 2*", pad, " - ", k, ") not divisible by stride ", stride);
  return span / stride + 1;
}

template <class Real>
Shape4 conv2d_out_shape(const Shape4& x, const Shape4& w, int stride, int pad) {
  require(w.c == x.c, "conv2d: input channel axis C=", x.c,
          " does not match weight Cin=", w.c);
  int oh = conv_out_extent<Real>(x.h, pad, w.h, stride, "H");
  int ow = conv_out_extent<Real>(x.w, pad, w.w, stride, "W");
  return Shape4{x.n, w.n, oh, ow};
}

template <class Real>
void conv2d_fwd(const TensorT<Real>& x, const TensorT<Real>& w,
                const std::vector<Real>& bias, int stride, int pad, TensorT<Real>& y) {
  const Shape4 ys = conv2d_out_shape<Real>(x.shape, w.shape, stride, pad);
  require(bias.empty() || static_cast<int>(bias.size()) == w.shape.n,
          "conv2d: bias length ", bias.size(), " does not match Cout=", w.shape.n);
  y = TensorT<Real>(ys);
  const int C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int KH = w.shape.h, KW = w.shape.w, OH = ys.h, OW = ys.w;
  for (int n = 0; n < ys.n; ++n)
    for (int co = 0; co < ys.c; ++co) {
      Real* out = &y.data[y.index(n, co, 0, 0)];
      if (!bias.empty())
        for (int i = 0; i < OH * OW; ++i) out[i] = bias[co];
      for (int ci = 0; ci < C; ++ci) {
        const Real* in = &x.data[x.index(n, ci, 0, 0)];
        for (int ky = 0; ky < KH; ++ky)
          for (int kx = 0; kx < KW; ++kx) {
            const Real wv = w.at(co, ci, ky, kx);
            if (wv == Real(0)) continue;
            for (int oy = 0; oy < OH; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              Real* orow = out + oy * OW;
              const Real* irow = in + iy * W;
              for (int ox = 0; ox < OW; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                orow[ox] += wv * irow[ix];
              }
            }
          }
      }
    }
}

// Accumulates into gx/gw/gb when the destination pointers are non-null.
template <class Real>
void conv2d_bwd(const TensorT<Real>& x, const TensorT<Real>& w, int stride, int pad,
                const TensorT<Real>& y, const std::vector<Real>& gy,
                std::vector<Real>* gx, std::vector<Real>* gw, std::vector<Real>* gb) {
  const int C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const int KH = w.shape.h, KW = w.shape.w, OH = y.shape.h, OW = y.shape.w;
  for (int n = 0; n < y.shape.n; ++n)
    for (int co = 0; co < y.shape.c; ++co) {
      const Real* g = &gy[y.index(n, co, 0, 0)];
      if (gb) {
        Real s = 0;
        for (int i = 0; i < OH * OW; ++i) s += g[i];
        (*gb)[co] += s;
      }
      for (int ci = 0; ci < C; ++ci) {
        const std::int64_t xoff = x.index(n, ci, 0, 0);
        for (int ky = 0; ky < KH; ++ky)
          for (int kx = 0; kx < KW; ++kx) {
            const Real wv = w.at(co, ci, ky, kx);
            Real acc = 0;
            for (int oy = 0; oy < OH; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              const Real* grow = g + oy * OW;
              const std::int64_t irow = xoff + static_cast<std::int64_t>(iy) * W;
              for (int ox = 0; ox < OW; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                if (gw) acc += x.data[irow + ix] * grow[ox];
                if (gx) (*gx)[irow + ix] += wv * grow[ox];
              }
            }
            if (gw) (*gw)[w.index(co, ci, ky, kx)] += acc;
          }
      }
    }
}

// one filter per channel, weight (C,1,k,k), no bias
template <class Real>
Shape4 depthwise_out_shape(const Shape4& x, const Shape4& w, int stride, int pad) {
  require(w.n == x.c && w.c == 1, "depthwise_conv2d: weight must be (C,1,k,k) with C=",
          x.c, ", got ", w.str());
  int oh = conv_out_extent<Real>(x.h, pad, w.h, stride, "H");
  int ow = conv_out_extent<Real>(x.w, pad, w.w, stride, "W");
  return Shape4{x.n, x.c, oh, ow};
}

template <class Real>
void depthwise_fwd(const TensorT<Real>& x, const TensorT<Real>& w, int stride, int pad,
                   TensorT<Real>& y) {
  const Shape4 ys = depthwise_out_shape<Real>(x.shape, w.shape, stride, pad);
  y = TensorT<Real>(ys);
  const int H = x.shape.h, W = x.shape.w, KH = w.shape.h, KW = w.shape.w;
  for (int n = 0; n < ys.n; ++n)
    for (int c = 0; c < ys.c; ++c) {
      Real* out = &y.data[y.index(n, c, 0, 0)];
      const Real* in = &x.data[x.index(n, c, 0, 0)];
      for (int ky = 0; ky < KH; ++ky)
        for (int kx = 0; kx < KW; ++kx) {
          const Real wv = w.at(c, 0, ky, kx);
          if (wv == Real(0)) continue;
          for (int oy = 0; oy < ys.h; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < ys.w; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              out[oy * ys.w + ox] += wv * in[iy * W + ix];
            }
          }
        }
    }
}

template <class Real>
void depthwise_bwd(const TensorT<Real>& x, const TensorT<Real>& w, int stride, int pad,
                   const TensorT<Real>& y, const std::vector<Real>& gy,
                   std::vector<Real>* gx, std::vector<Real>* gw) {
  const int H = x.shape.h, W = x.shape.w, KH = w.shape.h, KW = w.shape.w;
  for (int n = 0; n < y.shape.n; ++n)
    for (int c = 0; c < y.shape.c; ++c) {
      const Real* g = &gy[y.index(n, c, 0, 0)];
      const std::int64_t xoff = x.index(n, c, 0, 0);
      for (int ky = 0; ky < KH; ++ky)
        for (int kx = 0; kx < KW; ++kx) {
          const Real wv = w.at(c, 0, ky, kx);
          Real acc = 0;
          for (int oy = 0; oy < y.shape.h; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < y.shape.w; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const Real gv = g[oy * y.shape.w + ox];
              if (gw) acc += x.data[xoff + iy * W + ix] * gv;
              if (gx) (*gx)[xoff + iy * W + ix] += wv * gv;
            }
          }
          if (gw) (*gw)[w.index(c, 0, ky, kx)] += acc;
        }
    }
}

template <class Real>
void global_avg_pool_fwd(const TensorT<Real>& x, TensorT<Real>& y) {
  require(x.shape.h >= 1 && x.shape.w >= 1, "global_avg_pool: empty spatial extents ",
          x.shape.str());
  y = TensorT<Real>(Shape4{x.shape.n, x.shape.c, 1, 1});
  const std::int64_t hw = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
  for (int n = 0; n < x.shape.n; ++n)
    for (int c = 0; c < x.shape.c; ++c) {
      const Real* in = &x.data[x.index(n, c, 0, 0)];
      Real s = 0;
      for (std::int64_t i = 0; i < hw; ++i) s += in[i];
      y.at(n, c, 0, 0) = s / static_cast<Real>(hw);
    }
}

template <class Real>
void upsample2x_fwd(const TensorT<Real>& x, TensorT<Real>& y) {
  y = TensorT<Real>(Shape4{x.shape.n, x.shape.c, x.shape.h * 2, x.shape.w * 2});
  for (int n = 0; n < x.shape.n; ++n)
    for (int c = 0; c < x.shape.c; ++c)
      for (int iy = 0; iy < x.shape.h; ++iy)
        for (int ix = 0; ix < x.shape.w; ++ix) {
          const Real v = x.at(n, c, iy, ix);
          y.at(n, c, 2 * iy, 2 * ix) = v;
          y.at(n, c, 2 * iy, 2 * ix + 1) = v;
          y.at(n, c, 2 * iy + 1, 2 * ix) = v;
          y.at(n, c, 2 * iy + 1, 2 * ix + 1) = v;
        }
}

// numerically safe scalar nonlinearities
template <class Real>
Real sigmoid_scalar(Real v) {
  if (v >= 0) {
    Real e = std::exp(-v);
    return Real(1) / (Real(1) + e);
  }
  Real e = std::exp(v);
  return e / (Real(1) + e);
}

template <class Real>
Real softplus_scalar(Real v) {
  // log(1 + e^v) = max(v, 0) + log1p(e^{-|v|})
  return std::max(v, Real(0)) + std::log1p(std::exp(-std::abs(v)));
}

// max-subtracted softmax with temperature over a plain vector
template <class Real>
std::vector<Real> softmax_with_temperature(const std::vector<Real>& logits, Real tau) {
  require(tau > Real(0), "softmax_with_temperature: tau must be positive, got ", tau);
  require(!logits.empty(), "softmax_with_temperature: empty logit vector");
  Real mx = logits[0];
  for (Real v : logits) mx = std::max(mx, v);
  std::vector<Real> out(logits.size());
  Real sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / tau);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace sardet
