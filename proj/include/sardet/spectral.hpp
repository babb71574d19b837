#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "sardet/tensor.hpp"

// Frequency- and wavelet-domain primitives: radix-2 2-D FFT with a naive DFT
// reference path, single-level orthonormal Haar transform, soft-thresholding
// and radial frequency band masks.

namespace sardet {

template <class Real>
struct ComplexSpectrumT {
  Shape4 shape{};
  std::vector<Real> re, im;

  ComplexSpectrumT() = default;
  explicit ComplexSpectrumT(Shape4 s)
      : shape(s),
        re(static_cast<std::size_t>(s.numel()), Real(0)),
        im(static_cast<std::size_t>(s.numel()), Real(0)) {}

  std::int64_t index(int n, int c, int v, int u) const {
    return ((static_cast<std::int64_t>(n) * shape.c + c) * shape.h + v) * shape.w + u;
  }
};

using ComplexSpectrum = ComplexSpectrumT<float>;

template <class Real>
struct WaveletSubbandsT {
  TensorT<Real> ll, lh, hl, hh;
};

using WaveletSubbands = WaveletSubbandsT<float>;

inline bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

namespace detail {

// In-place radix-2 Cooley-Tukey over a strided line. sign = -1 forward, +1 inverse.
template <class Real>
void fft_line(Real* re, Real* im, int n, std::int64_t stride, int sign) {
  // bit-reversal permutation
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i * stride], re[j * stride]);
      std::swap(im[i * stride], im[j * stride]);
    }
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / len;
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (int i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (int j = 0; j < len / 2; ++j) {
        Real* a_re = re + (i + j) * stride;
        Real* a_im = im + (i + j) * stride;
        Real* b_re = re + (i + j + len / 2) * stride;
        Real* b_im = im + (i + j + len / 2) * stride;
        const double ur = *a_re, ui = *a_im;
        const double vr = *b_re * cr - *b_im * ci;
        const double vi = *b_re * ci + *b_im * cr;
        *a_re = static_cast<Real>(ur + vr);
        *a_im = static_cast<Real>(ui + vi);
        *b_re = static_cast<Real>(ur - vr);
        *b_im = static_cast<Real>(ui - vi);
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

template <class Real>
void fft2_planes(ComplexSpectrumT<Real>& s, int sign) {
  const int H = s.shape.h, W = s.shape.w;
  for (int n = 0; n < s.shape.n; ++n)
    for (int c = 0; c < s.shape.c; ++c) {
      const std::int64_t base = s.index(n, c, 0, 0);
      for (int y = 0; y < H; ++y)
        fft_line(&s.re[base + static_cast<std::int64_t>(y) * W],
                 &s.im[base + static_cast<std::int64_t>(y) * W], W, 1, sign);
      for (int x = 0; x < W; ++x)
        fft_line(&s.re[base + x], &s.im[base + x], H, W, sign);
    }
}

}  // namespace detail

// Unnormalized forward 2-D FFT. Fast path requires power-of-two extents.
template <class Real>
ComplexSpectrumT<Real> fft2(const TensorT<Real>& x) {
  require(is_pow2(x.shape.h) && is_pow2(x.shape.w),
          "fft2: H=", x.shape.h, " W=", x.shape.w,
          " must be powers of two; use naive_dft2 for arbitrary sizes");
  ComplexSpectrumT<Real> s(x.shape);
  std::copy(x.data.begin(), x.data.end(), s.re.begin());
  detail::fft2_planes(s, -1);
  return s;
}

// 1/(H*W)-normalized inverse; returns both parts (imaginary kept for
// conjugate-symmetry checks).
template <class Real>
ComplexSpectrumT<Real> ifft2(const ComplexSpectrumT<Real>& s) {
  require(is_pow2(s.shape.h) && is_pow2(s.shape.w),
          "ifft2: H=", s.shape.h, " W=", s.shape.w,
          " must be powers of two; use naive_dft2 for arbitrary sizes");
  ComplexSpectrumT<Real> out = s;
  detail::fft2_planes(out, +1);
  const Real norm = Real(1) / static_cast<Real>(static_cast<std::int64_t>(s.shape.h) * s.shape.w);
  for (auto& v : out.re) v *= norm;
  for (auto& v : out.im) v *= norm;
  return out;
}

// O(n^2) reference DFT for any size; test oracle for fft2.
template <class Real>
ComplexSpectrumT<Real> naive_dft2(const TensorT<Real>& x) {
  ComplexSpectrumT<Real> s(x.shape);
  const int H = x.shape.h, W = x.shape.w;
  for (int n = 0; n < x.shape.n; ++n)
    for (int c = 0; c < x.shape.c; ++c)
      for (int v = 0; v < H; ++v)
        for (int u = 0; u < W; ++u) {
          double sr = 0.0, si = 0.0;
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
              const double ang = -2.0 * std::numbers::pi *
                                 (static_cast<double>(v) * y / H + static_cast<double>(u) * xx / W);
              const double val = x.at(n, c, y, xx);
              sr += val * std::cos(ang);
              si += val * std::sin(ang);
            }
          s.re[s.index(n, c, v, u)] = static_cast<Real>(sr);
          s.im[s.index(n, c, v, u)] = static_cast<Real>(si);
        }
  return s;
}

// Orthonormal 2x2 Haar. For a block [[a,b],[c,d]]:
//   LL=(a+b+c+d)/2, LH=(a-b+c-d)/2, HL=(a+b-c-d)/2, HH=(a-b-c+d)/2.
template <class Real>
WaveletSubbandsT<Real> haar_dwt2(const TensorT<Real>& x) {
  require(x.shape.h % 2 == 0 && x.shape.w % 2 == 0,
          "haar_dwt2: H=", x.shape.h, " W=", x.shape.w, " must be even");
  const Shape4 hs{x.shape.n, x.shape.c, x.shape.h / 2, x.shape.w / 2};
  WaveletSubbandsT<Real> sb{TensorT<Real>(hs), TensorT<Real>(hs), TensorT<Real>(hs),
                            TensorT<Real>(hs)};
  for (int n = 0; n < x.shape.n; ++n)
    for (int c = 0; c < x.shape.c; ++c)
      for (int y = 0; y < hs.h; ++y)
        for (int xx = 0; xx < hs.w; ++xx) {
          const Real a = x.at(n, c, 2 * y, 2 * xx);
          const Real b = x.at(n, c, 2 * y, 2 * xx + 1);
          const Real cc = x.at(n, c, 2 * y + 1, 2 * xx);
          const Real d = x.at(n, c, 2 * y + 1, 2 * xx + 1);
          sb.ll.at(n, c, y, xx) = (a + b + cc + d) / 2;
          sb.lh.at(n, c, y, xx) = (a - b + cc - d) / 2;
          sb.hl.at(n, c, y, xx) = (a + b - cc - d) / 2;
          sb.hh.at(n, c, y, xx) = (a - b - cc + d) / 2;
        }
  return sb;
}

// Exact transpose of haar_dwt2.
template <class Real>
TensorT<Real> haar_idwt2(const WaveletSubbandsT<Real>& sb) {
  const Shape4 hs = sb.ll.shape;
  require(sb.lh.shape == hs && sb.hl.shape == hs && sb.hh.shape == hs,
          "haar_idwt2: subband shapes disagree");
  TensorT<Real> x(Shape4{hs.n, hs.c, hs.h * 2, hs.w * 2});
  for (int n = 0; n < hs.n; ++n)
    for (int c = 0; c < hs.c; ++c)
      for (int y = 0; y < hs.h; ++y)
        for (int xx = 0; xx < hs.w; ++xx) {
          const Real ll = sb.ll.at(n, c, y, xx);
          const Real lh = sb.lh.at(n, c, y, xx);
          const Real hl = sb.hl.at(n, c, y, xx);
          const Real hh = sb.hh.at(n, c, y, xx);
          x.at(n, c, 2 * y, 2 * xx) = (ll + lh + hl + hh) / 2;
          x.at(n, c, 2 * y, 2 * xx + 1) = (ll - lh + hl - hh) / 2;
          x.at(n, c, 2 * y + 1, 2 * xx) = (ll + lh - hl - hh) / 2;
          x.at(n, c, 2 * y + 1, 2 * xx + 1) = (ll - lh - hl + hh) / 2;
        }
  return x;
}

// sign(x) * max(|x| - t_c, 0) with one threshold per channel.
template <class Real>
TensorT<Real> soft_threshold(const TensorT<Real>& x, const std::vector<Real>& t) {
  require(static_cast<int>(t.size()) == x.shape.c,
          "soft_threshold: threshold vector length ", t.size(), " != C=", x.shape.c);
  for (Real v : t) require(v >= Real(0), "soft_threshold: negative threshold ", v);
  TensorT<Real> y(x.shape);
  const std::int64_t hw = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
  for (int n = 0; n < x.shape.n; ++n)
    for (int c = 0; c < x.shape.c; ++c) {
      const Real* in = &x.data[x.index(n, c, 0, 0)];
      Real* out = &y.data[y.index(n, c, 0, 0)];
      const Real tc = t[c];
      for (std::int64_t i = 0; i < hw; ++i) {
        const Real a = std::abs(in[i]) - tc;
        out[i] = a > Real(0) ? (in[i] > Real(0) ? a : -a) : Real(0);
      }
    }
  return y;
}

// Centered frequency radius of bin (v,u) on an HxW grid.
inline double centered_radius(int v, int u, int h, int w) {
  const int dv = ((v + h / 2) % h) - h / 2;
  const int du = ((u + w / 2) % w) - w / 2;
  return std::sqrt(static_cast<double>(dv) * dv + static_cast<double>(du) * du);
}

// Partition of the centered-frequency plane into `bands` annuli of equal
// radius increments. Masks are disjoint and cover the plane; DC falls in
// band 0 and the Nyquist corner in the last band.
template <class Real = float>
TensorT<Real> radial_band_mask(int h, int w, int bands) {
  require(bands >= 1, "radial_band_mask: bands must be >= 1, got ", bands);
  TensorT<Real> m(Shape4{bands, 1, h, w});
  const double rmax = std::sqrt(static_cast<double>(h / 2) * (h / 2) +
                                static_cast<double>(w / 2) * (w / 2));
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double r = centered_radius(v, u, h, w);
      int b = rmax > 0 ? static_cast<int>(r / rmax * bands) : 0;
      if (b >= bands) b = bands - 1;  // closes the outermost annulus at rmax
      m.at(b, 0, v, u) = Real(1);
    }
  return m;
}

template <class Real>
int band_of(const TensorT<Real>& masks, int v, int u) {
  for (int b = 0; b < masks.shape.n; ++b)
    if (masks.at(b, 0, v, u) != Real(0)) return b;
  return -1;
}

}  // namespace sardet
