#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sardet/kernels.hpp"
#include "sardet/spectral.hpp"

// Reverse-mode tape. Dynamic: rebuilt per forward pass. Backward visits
// recorded operations in exact reverse of recording order and accumulates
// gradients additively into shared inputs and bound parameters.

namespace sardet {

template <class Real>
class TapeT {
 public:
  struct Id {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  struct Node {
    TensorT<Real> val;
    TensorT<Real> val_im;  // populated for complex nodes only
    bool is_complex = false;
    std::vector<Real> grad, grad_im;
    std::function<void(TapeT&, int)> back;
    TensorT<Real>* bound = nullptr;  // parameter leaves accumulate here
    const char* op = "";
  };

  // ---- node access ----------------------------------------------------

  const TensorT<Real>& value(Id id) const { return nodes_.at(id.i).val; }
  const TensorT<Real>& value_im(Id id) const { return nodes_.at(id.i).val_im; }
  bool is_complex(Id id) const { return nodes_.at(id.i).is_complex; }
  const char* op_name(Id id) const { return nodes_.at(id.i).op; }
  int size() const { return static_cast<int>(nodes_.size()); }

  std::vector<Real>& grad_buf(Id id) { return ensure_grad(id.i); }
  std::vector<Real>& grad_im_buf(Id id) { return ensure_grad_im(id.i); }
  const std::vector<Real>& grad(Id id) const { return nodes_.at(id.i).grad; }

  // ---- leaves ----------------------------------------------------------

  Id constant(TensorT<Real> v, const char* op = "constant") {
    return push(std::move(v), nullptr, op);
  }

  // differentiable input; gradient retrievable via grad() after backward
  Id input(TensorT<Real> v, const char* op = "input") {
    Id id = push(std::move(v), nullptr, op);
    nodes_[id.i].back = [](TapeT&, int) {};
    return id;
  }

  // leaf bound to a persistent parameter: backward adds into p->grad
  Id param(TensorT<Real>* p, const char* op = "param") {
    require(p != nullptr, "tape.param: null parameter");
    Id id = push(*p, p, op);
    nodes_[id.i].back = [](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      if (nd.bound->requires_grad) {
        if (nd.bound->grad.empty()) nd.bound->grad.assign(nd.bound->data.size(), Real(0));
        for (std::size_t k = 0; k < nd.grad.size(); ++k) nd.bound->grad[k] += nd.grad[k];
      }
    };
    return id;
  }

  // ---- arithmetic / shape ops -------------------------------------------

  Id conv2d(Id x, Id w, Id b, int stride, int pad) {
    const TensorT<Real>& xv = value(x);
    const TensorT<Real>& wv = value(w);
    static const std::vector<Real> kNoBias;
    const std::vector<Real>& bias = b.valid() ? value(b).data : kNoBias;
    TensorT<Real> y;
    conv2d_fwd(xv, wv, bias, stride, pad, y);
    Id id = push(std::move(y), nullptr, "conv2d");
    nodes_[id.i].back = [x, w, b, stride, pad](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto* gx = &t.ensure_grad(x.i);
      auto* gw = &t.ensure_grad(w.i);
      std::vector<Real>* gb = b.valid() ? &t.ensure_grad(b.i) : nullptr;
      conv2d_bwd(t.nodes_[x.i].val, t.nodes_[w.i].val, stride, pad, nd.val, nd.grad, gx,
                 gw, gb);
    };
    return id;
  }

  Id depthwise_conv2d(Id x, Id w, int stride, int pad) {
    TensorT<Real> y;
    depthwise_fwd(value(x), value(w), stride, pad, y);
    Id id = push(std::move(y), nullptr, "depthwise_conv2d");
    nodes_[id.i].back = [x, w, stride, pad](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      depthwise_bwd(t.nodes_[x.i].val, t.nodes_[w.i].val, stride, pad, nd.val, nd.grad,
                    &t.ensure_grad(x.i), &t.ensure_grad(w.i));
    };
    return id;
  }

  Id relu(Id x) {
    TensorT<Real> y = value(x);
    for (auto& v : y.data) v = v > Real(0) ? v : Real(0);
    Id id = push(std::move(y), nullptr, "relu");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gx = t.ensure_grad(x.i);
      const auto& in = t.nodes_[x.i].val.data;
      for (std::size_t k = 0; k < gx.size(); ++k)
        if (in[k] > Real(0)) gx[k] += nd.grad[k];
    };
    return id;
  }

  Id sigmoid(Id x) {
    TensorT<Real> y = value(x);
    for (auto& v : y.data) v = sigmoid_scalar(v);
    Id id = push(std::move(y), nullptr, "sigmoid");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gx = t.ensure_grad(x.i);
      for (std::size_t k = 0; k < gx.size(); ++k) {
        const Real s = nd.val.data[k];
        gx[k] += nd.grad[k] * s * (Real(1) - s);
      }
    };
    return id;
  }

  Id softplus(Id x) {
    TensorT<Real> y = value(x);
    for (auto& v : y.data) v = softplus_scalar(v);
    Id id = push(std::move(y), nullptr, "softplus");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gx = t.ensure_grad(x.i);
      const auto& in = t.nodes_[x.i].val.data;
      for (std::size_t k = 0; k < gx.size(); ++k)
        gx[k] += nd.grad[k] * sigmoid_scalar(in[k]);
    };
    return id;
  }

  // binary ops accept identical shapes or a per-channel (1,C,1,1) second operand
  Id add(Id a, Id b) { return binary(a, b, "add"); }
  Id mul(Id a, Id b) { return binary(a, b, "mul"); }

  Id scale(Id x, Real k) {
    TensorT<Real> y = value(x);
    for (auto& v : y.data) v *= k;
    Id id = push(std::move(y), nullptr, "scale");
    nodes_[id.i].back = [x, k](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gx = t.ensure_grad(x.i);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += k * nd.grad[i];
    };
    return id;
  }

  // multiply a tensor by a scalar-valued node (1,1,1,1); carries gradient
  // into the scalar, which is how routing weights reach the router
  Id scale_by(Id x, Id s) {
    require(value(s).numel() == 1, "scale_by: scalar operand must have one element, got ",
            value(s).shape.str());
    const Real sv = value(s).data[0];
    TensorT<Real> y = value(x);
    for (auto& v : y.data) v *= sv;
    Id id = push(std::move(y), nullptr, "scale_by");
    nodes_[id.i].back = [x, s, sv](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gx = t.ensure_grad(x.i);
      auto& gs = t.ensure_grad(s.i);
      const auto& xv = t.nodes_[x.i].val.data;
      Real acc = 0;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += sv * nd.grad[i];
        acc += xv[i] * nd.grad[i];
      }
      gs[0] += acc;
    };
    return id;
  }

  Id global_avg_pool(Id x) {
    TensorT<Real> y;
    global_avg_pool_fwd(value(x), y);
    Id id = push(std::move(y), nullptr, "global_avg_pool");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const TensorT<Real>& xv = t.nodes_[x.i].val;
      auto& gx = t.ensure_grad(x.i);
      const std::int64_t hw = static_cast<std::int64_t>(xv.shape.h) * xv.shape.w;
      const Real inv = Real(1) / static_cast<Real>(hw);
      for (int n = 0; n < xv.shape.n; ++n)
        for (int c = 0; c < xv.shape.c; ++c) {
          const Real g = nd.grad[nd.val.index(n, c, 0, 0)] * inv;
          Real* dst = &gx[xv.index(n, c, 0, 0)];
          for (std::int64_t i = 0; i < hw; ++i) dst[i] += g;
        }
    };
    return id;
  }

  Id upsample_nearest2x(Id x) {
    TensorT<Real> y;
    upsample2x_fwd(value(x), y);
    Id id = push(std::move(y), nullptr, "upsample_nearest2x");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const TensorT<Real>& xv = t.nodes_[x.i].val;
      auto& gx = t.ensure_grad(x.i);
      for (int n = 0; n < xv.shape.n; ++n)
        for (int c = 0; c < xv.shape.c; ++c)
          for (int iy = 0; iy < xv.shape.h; ++iy)
            for (int ix = 0; ix < xv.shape.w; ++ix)
              gx[xv.index(n, c, iy, ix)] +=
                  nd.grad[nd.val.index(n, c, 2 * iy, 2 * ix)] +
                  nd.grad[nd.val.index(n, c, 2 * iy, 2 * ix + 1)] +
                  nd.grad[nd.val.index(n, c, 2 * iy + 1, 2 * ix)] +
                  nd.grad[nd.val.index(n, c, 2 * iy + 1, 2 * ix + 1)];
    };
    return id;
  }

  // softmax over the channel axis with temperature, per (n,y,x) site
  Id softmax_temp(Id x, Real tau) {
    require(tau > Real(0), "softmax_temp: tau must be positive, got ", tau);
    const TensorT<Real>& xv = value(x);
    TensorT<Real> y(xv.shape);
    const int C = xv.shape.c;
    for (int n = 0; n < xv.shape.n; ++n)
      for (int yy = 0; yy < xv.shape.h; ++yy)
        for (int xx = 0; xx < xv.shape.w; ++xx) {
          std::vector<Real> logits(C);
          for (int c = 0; c < C; ++c) logits[c] = xv.at(n, c, yy, xx);
          auto probs = softmax_with_temperature(logits, tau);
          for (int c = 0; c < C; ++c) y.at(n, c, yy, xx) = probs[c];
        }
    Id id = push(std::move(y), nullptr, "softmax_temp");
    nodes_[id.i].back = [x, tau](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const TensorT<Real>& pv = nd.val;
      auto& gx = t.ensure_grad(x.i);
      const int C = pv.shape.c;
      for (int n = 0; n < pv.shape.n; ++n)
        for (int yy = 0; yy < pv.shape.h; ++yy)
          for (int xx = 0; xx < pv.shape.w; ++xx) {
            Real dot = 0;
            for (int c = 0; c < C; ++c)
              dot += nd.grad[pv.index(n, c, yy, xx)] * pv.at(n, c, yy, xx);
            for (int c = 0; c < C; ++c) {
              const std::int64_t k = pv.index(n, c, yy, xx);
              gx[k] += pv.data[k] / tau * (nd.grad[k] - dot);
            }
          }
    };
    return id;
  }

  // renormalized weights over a fixed selected index set: out_t = p[sel_t]/sum
  Id topk_renorm(Id probs, std::vector<int> selected) {
    const TensorT<Real>& pv = value(probs);
    require(pv.shape.n == 1 && pv.shape.h == 1 && pv.shape.w == 1,
            "topk_renorm: probs must be (1,E,1,1), got ", pv.shape.str());
    Real sum = 0;
    for (int e : selected) {
      require(e >= 0 && e < pv.shape.c, "topk_renorm: index ", e, " out of range E=",
              pv.shape.c);
      sum += pv.data[e];
    }
    require(sum > Real(0), "topk_renorm: selected probabilities sum to zero");
    TensorT<Real> y(Shape4{1, static_cast<int>(selected.size()), 1, 1});
    for (std::size_t t = 0; t < selected.size(); ++t) y.data[t] = pv.data[selected[t]] / sum;
    Id id = push(std::move(y), nullptr, "topk_renorm");
    nodes_[id.i].back = [probs, selected, sum](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gp = t.ensure_grad(probs.i);
      const std::size_t k = selected.size();
      for (std::size_t u = 0; u < k; ++u) {
        Real acc = 0;
        for (std::size_t tt = 0; tt < k; ++tt) {
          const Real d = (tt == u ? Real(1) : Real(0)) - nd.val.data[tt];
          acc += nd.grad[tt] * d / sum;
        }
        gp[selected[u]] += acc;
      }
    };
    return id;
  }

  Id concat_channels(std::span<const Id> parts) {
    require(!parts.empty(), "concat_channels: no operands");
    const Shape4 s0 = value(parts[0]).shape;
    int ctot = 0;
    for (Id p : parts) {
      const Shape4 s = value(p).shape;
      require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
              "concat_channels: mismatched non-channel axes ", s.str(), " vs ", s0.str());
      ctot += s.c;
    }
    TensorT<Real> y(Shape4{s0.n, ctot, s0.h, s0.w});
    std::vector<Id> ids(parts.begin(), parts.end());
    int coff = 0;
    for (Id p : parts) {
      const TensorT<Real>& pv = value(p);
      for (int n = 0; n < pv.shape.n; ++n)
        for (int c = 0; c < pv.shape.c; ++c)
          for (int yy = 0; yy < pv.shape.h; ++yy)
            for (int xx = 0; xx < pv.shape.w; ++xx)
              y.at(n, coff + c, yy, xx) = pv.at(n, c, yy, xx);
      coff += pv.shape.c;
    }
    Id id = push(std::move(y), nullptr, "concat_channels");
    nodes_[id.i].back = [ids](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      int coff = 0;
      for (Id p : ids) {
        const TensorT<Real>& pv = t.nodes_[p.i].val;
        auto& gp = t.ensure_grad(p.i);
        for (int n = 0; n < pv.shape.n; ++n)
          for (int c = 0; c < pv.shape.c; ++c)
            for (int yy = 0; yy < pv.shape.h; ++yy)
              for (int xx = 0; xx < pv.shape.w; ++xx)
                gp[pv.index(n, c, yy, xx)] +=
                    nd.grad[nd.val.index(n, coff + c, yy, xx)];
        coff += pv.shape.c;
      }
    };
    return id;
  }

  // log(1+x) dynamic-range compression for nonnegative intensities
  Id log1p_op(Id x) {
    TensorT<Real> y = value(x);
    for (auto& v : y.data) {
      require(v > Real(-1), "log1p: operand value ", v, " outside (-1, inf)");
      v = std::log1p(v);
    }
    Id id = push(std::move(y), nullptr, "log1p");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gx = t.ensure_grad(x.i);
      const auto& in = t.nodes_[x.i].val.data;
      for (std::size_t k = 0; k < gx.size(); ++k)
        gx[k] += nd.grad[k] / (Real(1) + in[k]);
    };
    return id;
  }

  Id zero_pad(Id x, int top, int bottom, int left, int right) {
    require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0,
            "zero_pad: negative padding");
    const TensorT<Real>& xv = value(x);
    TensorT<Real> y(Shape4{xv.shape.n, xv.shape.c, xv.shape.h + top + bottom,
                           xv.shape.w + left + right});
    for (int n = 0; n < xv.shape.n; ++n)
      for (int c = 0; c < xv.shape.c; ++c)
        for (int yy = 0; yy < xv.shape.h; ++yy)
          for (int xx = 0; xx < xv.shape.w; ++xx)
            y.at(n, c, yy + top, xx + left) = xv.at(n, c, yy, xx);
    Id id = push(std::move(y), nullptr, "zero_pad");
    nodes_[id.i].back = [x, top, left](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const TensorT<Real>& xv = t.nodes_[x.i].val;
      auto& gx = t.ensure_grad(x.i);
      for (int n = 0; n < xv.shape.n; ++n)
        for (int c = 0; c < xv.shape.c; ++c)
          for (int yy = 0; yy < xv.shape.h; ++yy)
            for (int xx = 0; xx < xv.shape.w; ++xx)
              gx[xv.index(n, c, yy, xx)] +=
                  nd.grad[nd.val.index(n, c, yy + top, xx + left)];
    };
    return id;
  }

  // pick one channel of a (N,C,1,1) vector as a scalar node
  Id slice_channel(Id x, int c) {
    const TensorT<Real>& xv = value(x);
    require(xv.shape.n == 1 && xv.shape.h == 1 && xv.shape.w == 1,
            "slice_channel: operand must be (1,C,1,1), got ", xv.shape.str());
    require(c >= 0 && c < xv.shape.c, "slice_channel: channel ", c, " out of range C=",
            xv.shape.c);
    TensorT<Real> y(Shape4{1, 1, 1, 1});
    y.data[0] = xv.data[c];
    Id id = push(std::move(y), nullptr, "slice_channel");
    nodes_[id.i].back = [x, c](TapeT& t, int self) {
      t.ensure_grad(x.i)[c] += t.nodes_[self].grad[0];
    };
    return id;
  }

  Id sum_all(Id x) {
    double s = 0;  // double accumulation keeps long reductions FD-checkable
    for (Real v : value(x).data) s += static_cast<double>(v);
    TensorT<Real> y(Shape4{1, 1, 1, 1});
    y.data[0] = static_cast<Real>(s);
    Id id = push(std::move(y), nullptr, "sum_all");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      auto& gx = t.ensure_grad(x.i);
      for (auto& g : gx) g += nd.grad[0];
    };
    return id;
  }

  // ---- spectral / wavelet ops -------------------------------------------

  Id fft2_op(Id x) {
    ComplexSpectrumT<Real> s = sardet::fft2(value(x));
    Id id = push_complex(std::move(s), "fft2");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const Shape4 sh = nd.val.shape;
      ComplexSpectrumT<Real> g(sh);
      if (!nd.grad.empty()) g.re = nd.grad;
      if (!nd.grad_im.empty()) g.im = nd.grad_im;
      ComplexSpectrumT<Real> back = sardet::ifft2(g);
      auto& gx = t.ensure_grad(x.i);
      const Real hw = static_cast<Real>(static_cast<std::int64_t>(sh.h) * sh.w);
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += hw * back.re[k];
    };
    return id;
  }

  Id ifft2_real(Id s) {
    require(is_complex(s), "ifft2_real: operand is not a spectrum");
    ComplexSpectrumT<Real> spec(value(s).shape);
    spec.re = value(s).data;
    spec.im = value_im(s).data;
    ComplexSpectrumT<Real> inv = sardet::ifft2(spec);
    TensorT<Real> y(value(s).shape);
    y.data = std::move(inv.re);
    Id id = push(std::move(y), nullptr, "ifft2_real");
    nodes_[id.i].back = [s](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      TensorT<Real> g(nd.val.shape);
      g.data = nd.grad;
      ComplexSpectrumT<Real> gf = sardet::fft2(g);
      auto& gre = t.ensure_grad(s.i);
      auto& gim = t.ensure_grad_im(s.i);
      const Real inv_hw =
          Real(1) / static_cast<Real>(static_cast<std::int64_t>(nd.val.shape.h) * nd.val.shape.w);
      for (std::size_t k = 0; k < gre.size(); ++k) {
        gre[k] += inv_hw * gf.re[k];
        gim[k] += inv_hw * gf.im[k];
      }
    };
    return id;
  }

  // multiply a spectrum by per-(band, channel) real gains; masks (B,1,H,W)
  // partition the plane
  Id complex_band_scale(Id s, Id gains, const TensorT<Real>& masks) {
    require(is_complex(s), "complex_band_scale: operand is not a spectrum");
    const Shape4 sh = value(s).shape;
    const TensorT<Real>& gv = value(gains);
    require(gv.shape.n == masks.shape.n && gv.shape.c == sh.c,
            "complex_band_scale: gains must be (bands,C,1,1); got ", gv.shape.str());
    require(masks.shape.h == sh.h && masks.shape.w == sh.w,
            "complex_band_scale: mask extent ", masks.shape.str(),
            " does not match spectrum ", sh.str());
    std::vector<int> band(static_cast<std::size_t>(sh.h) * sh.w);
    for (int v = 0; v < sh.h; ++v)
      for (int u = 0; u < sh.w; ++u) band[v * sh.w + u] = band_of(masks, v, u);
    ComplexSpectrumT<Real> out(sh);
    const TensorT<Real>& sv = value(s);
    const TensorT<Real>& svi = value_im(s);
    for (int n = 0; n < sh.n; ++n)
      for (int c = 0; c < sh.c; ++c)
        for (int v = 0; v < sh.h; ++v)
          for (int u = 0; u < sh.w; ++u) {
            const std::int64_t k = out.index(n, c, v, u);
            const Real f = gv.at(band[v * sh.w + u], c, 0, 0);
            out.re[k] = sv.data[k] * f;
            out.im[k] = svi.data[k] * f;
          }
    Id id = push_complex(std::move(out), "complex_band_scale");
    nodes_[id.i].back = [s, gains, band](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const Shape4 sh = nd.val.shape;
      const TensorT<Real>& gv = t.nodes_[gains.i].val;
      const TensorT<Real>& sv = t.nodes_[s.i].val;
      const TensorT<Real>& svi = t.nodes_[s.i].val_im;
      auto& gre = t.ensure_grad(s.i);
      auto& gim = t.ensure_grad_im(s.i);
      auto& gg = t.ensure_grad(gains.i);
      const bool has_re = !nd.grad.empty(), has_im = !nd.grad_im.empty();
      for (int n = 0; n < sh.n; ++n)
        for (int c = 0; c < sh.c; ++c)
          for (int v = 0; v < sh.h; ++v)
            for (int u = 0; u < sh.w; ++u) {
              const std::int64_t k = sv.index(n, c, v, u);
              const int b = band[v * sh.w + u];
              const Real f = gv.at(b, c, 0, 0);
              const Real gr = has_re ? nd.grad[k] : Real(0);
              const Real gi = has_im ? nd.grad_im[k] : Real(0);
              gre[k] += f * gr;
              gim[k] += f * gi;
              gg[gv.index(b, c, 0, 0)] += gr * sv.data[k] + gi * svi.data[k];
            }
    };
    return id;
  }

  // log(1 + |spectrum|) elementwise, as a real tensor
  Id complex_log1p_abs(Id s) {
    require(is_complex(s), "complex_log1p_abs: operand is not a spectrum");
    const TensorT<Real>& re = value(s);
    const TensorT<Real>& im = value_im(s);
    TensorT<Real> y(re.shape);
    for (std::size_t k = 0; k < y.data.size(); ++k) {
      const Real m = std::sqrt(re.data[k] * re.data[k] + im.data[k] * im.data[k]);
      y.data[k] = std::log1p(m);
    }
    Id id = push(std::move(y), nullptr, "complex_log1p_abs");
    nodes_[id.i].back = [s](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const TensorT<Real>& re = t.nodes_[s.i].val;
      const TensorT<Real>& im = t.nodes_[s.i].val_im;
      auto& gre = t.ensure_grad(s.i);
      auto& gim = t.ensure_grad_im(s.i);
      const Real eps = Real(1e-12);
      for (std::size_t k = 0; k < gre.size(); ++k) {
        const Real m = std::sqrt(re.data[k] * re.data[k] + im.data[k] * im.data[k]);
        const Real coef = nd.grad[k] / ((m + eps) * (Real(1) + m));
        gre[k] += coef * re.data[k];
        gim[k] += coef * im.data[k];
      }
    };
    return id;
  }

  // per-(band, channel) mean of a real map under masks (B,1,H,W) -> (N, B*C, 1, 1)
  Id band_masked_mean(Id x, const TensorT<Real>& masks) {
    const TensorT<Real>& xv = value(x);
    const int B = masks.shape.n, C = xv.shape.c;
    require(masks.shape.h == xv.shape.h && masks.shape.w == xv.shape.w,
            "band_masked_mean: mask extent ", masks.shape.str(), " does not match ",
            xv.shape.str());
    std::vector<std::int64_t> count(B, 0);
    std::vector<int> band(static_cast<std::size_t>(xv.shape.h) * xv.shape.w);
    for (int v = 0; v < xv.shape.h; ++v)
      for (int u = 0; u < xv.shape.w; ++u) {
        const int b = band_of(masks, v, u);
        band[v * xv.shape.w + u] = b;
        if (b >= 0) ++count[b];
      }
    TensorT<Real> y(Shape4{xv.shape.n, B * C, 1, 1});
    for (int n = 0; n < xv.shape.n; ++n)
      for (int c = 0; c < C; ++c)
        for (int v = 0; v < xv.shape.h; ++v)
          for (int u = 0; u < xv.shape.w; ++u) {
            const int b = band[v * xv.shape.w + u];
            if (b >= 0) y.at(n, b * C + c, 0, 0) += xv.at(n, c, v, u);
          }
    for (int n = 0; n < xv.shape.n; ++n)
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          if (count[b] > 0) y.at(n, b * C + c, 0, 0) /= static_cast<Real>(count[b]);
    Id id = push(std::move(y), nullptr, "band_masked_mean");
    nodes_[id.i].back = [x, band, count, B](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const TensorT<Real>& xv = t.nodes_[x.i].val;
      auto& gx = t.ensure_grad(x.i);
      const int C = xv.shape.c;
      for (int n = 0; n < xv.shape.n; ++n)
        for (int c = 0; c < C; ++c)
          for (int v = 0; v < xv.shape.h; ++v)
            for (int u = 0; u < xv.shape.w; ++u) {
              const int b = band[v * xv.shape.w + u];
              if (b < 0 || count[b] == 0) continue;
              gx[xv.index(n, c, v, u)] +=
                  nd.grad[nd.val.index(n, b * C + c, 0, 0)] / static_cast<Real>(count[b]);
            }
    };
    return id;
  }

  // single-level Haar with subbands stacked along channels: [LL, LH, HL, HH]
  Id haar_dwt_stack(Id x) {
    WaveletSubbandsT<Real> sb = haar_dwt2(value(x));
    Id id = push(stack_subbands(sb), nullptr, "haar_dwt_stack");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      TensorT<Real> g(nd.val.shape);
      g.data = nd.grad;
      TensorT<Real> gx = haar_idwt2(unstack_subbands(g));  // orthonormal: transpose = inverse
      auto& dst = t.ensure_grad(x.i);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gx.data[k];
    };
    return id;
  }

  Id haar_idwt_stack(Id stacked) {
    TensorT<Real> y = haar_idwt2(unstack_subbands(value(stacked)));
    Id id = push(std::move(y), nullptr, "haar_idwt_stack");
    nodes_[id.i].back = [stacked](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      TensorT<Real> g(nd.val.shape);
      g.data = nd.grad;
      TensorT<Real> gs = stack_subbands(haar_dwt2(g));
      auto& dst = t.ensure_grad(stacked.i);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gs.data[k];
    };
    return id;
  }

  // soft threshold with per-channel thresholds t (1,C,1,1); subgradient is
  // pass-through outside the dead zone, zero inside
  Id soft_threshold(Id x, Id t) {
    const TensorT<Real>& xv = value(x);
    const TensorT<Real>& tv = value(t);
    require(tv.shape.n == 1 && tv.shape.c == xv.shape.c && tv.shape.h == 1 && tv.shape.w == 1,
            "soft_threshold: thresholds must be (1,C,1,1) with C=", xv.shape.c, ", got ",
            tv.shape.str());
    TensorT<Real> y(xv.shape);
    for (int n = 0; n < xv.shape.n; ++n)
      for (int c = 0; c < xv.shape.c; ++c) {
        const Real tc = tv.data[c];
        const Real* in = &xv.data[xv.index(n, c, 0, 0)];
        Real* out = &y.data[y.index(n, c, 0, 0)];
        const std::int64_t hw = static_cast<std::int64_t>(xv.shape.h) * xv.shape.w;
        for (std::int64_t i = 0; i < hw; ++i) {
          const Real a = std::abs(in[i]) - tc;
          out[i] = a > Real(0) ? (in[i] > Real(0) ? a : -a) : Real(0);
        }
      }
    Id id = push(std::move(y), nullptr, "soft_threshold");
    nodes_[id.i].back = [x, t](TapeT& t_, int self) {
      Node& nd = t_.nodes_[self];
      const TensorT<Real>& xv = t_.nodes_[x.i].val;
      const TensorT<Real>& tv = t_.nodes_[t.i].val;
      auto& gx = t_.ensure_grad(x.i);
      auto& gt = t_.ensure_grad(t.i);
      const std::int64_t hw = static_cast<std::int64_t>(xv.shape.h) * xv.shape.w;
      for (int n = 0; n < xv.shape.n; ++n)
        for (int c = 0; c < xv.shape.c; ++c) {
          const Real tc = tv.data[c];
          const std::int64_t off = xv.index(n, c, 0, 0);
          Real tacc = 0;
          for (std::int64_t i = 0; i < hw; ++i) {
            const Real v = xv.data[off + i];
            if (std::abs(v) > tc) {
              const Real g = nd.grad[off + i];
              gx[off + i] += g;
              tacc += (v > Real(0) ? -g : g);
            }
          }
          gt[c] += tacc;
        }
    };
    return id;
  }

  // space-to-depth: (N,C,H,W) -> (N,4C,H/2,W/2); pure index permutation
  Id spd(Id x) {
    Id id = push(spd_fwd(value(x)), nullptr, "spd");
    nodes_[id.i].back = [x](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      TensorT<Real> g(nd.val.shape);
      g.data = nd.grad;
      TensorT<Real> gx = spd_inverse_fwd(g);
      auto& dst = t.ensure_grad(x.i);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gx.data[k];
    };
    return id;
  }

  Id spd_inverse(Id y) {
    Id id = push(spd_inverse_fwd(value(y)), nullptr, "spd_inverse");
    nodes_[id.i].back = [y](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      TensorT<Real> g(nd.val.shape);
      g.data = nd.grad;
      TensorT<Real> gy = spd_fwd(g);
      auto& dst = t.ensure_grad(y.i);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gy.data[k];
    };
    return id;
  }

  // custom multi-input op; `back` receives the tape and the node index
  Id custom(TensorT<Real> value, std::function<void(TapeT&, int)> back, const char* op) {
    Id id = push(std::move(value), nullptr, op);
    nodes_[id.i].back = std::move(back);
    return id;
  }

  // ---- backward ----------------------------------------------------------

  // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse recording order.
  // `trace` (when given) records the visit order for introspection.
  void backward(Id loss, std::vector<int>* trace = nullptr) {
    Node& ln = nodes_.at(loss.i);
    require(ln.val.numel() == 1, "backward: loss must be scalar, got shape ",
            ln.val.shape.str());
    ensure_grad(loss.i)[0] = Real(1);
    for (int i = loss.i; i >= 0; --i) {
      Node& nd = nodes_[i];
      if (nd.grad.empty() && nd.grad_im.empty()) continue;
      if (nd.back) {
        if (trace) trace->push_back(i);
        nd.back(*this, i);
      }
    }
  }

  // index and op name of the first node holding a non-finite value, if any
  std::pair<int, const char*> first_nonfinite() const {
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) {
      if (!nodes_[i].val.all_finite()) return {i, nodes_[i].op};
      if (nodes_[i].is_complex && !nodes_[i].val_im.all_finite()) return {i, nodes_[i].op};
    }
    return {-1, ""};
  }

  // ---- helpers shared with the neck -----------------------------------

  static TensorT<Real> spd_fwd(const TensorT<Real>& x) {
    require(x.shape.h % 2 == 0 && x.shape.w % 2 == 0, "spd: H=", x.shape.h,
            " W=", x.shape.w, " must be even");
    const int C = x.shape.c;
    TensorT<Real> y(Shape4{x.shape.n, 4 * C, x.shape.h / 2, x.shape.w / 2});
    for (int n = 0; n < x.shape.n; ++n)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < y.shape.h; ++i)
          for (int j = 0; j < y.shape.w; ++j)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                y.at(n, (2 * dy + dx) * C + c, i, j) = x.at(n, c, 2 * i + dy, 2 * j + dx);
    return y;
  }

  static TensorT<Real> spd_inverse_fwd(const TensorT<Real>& y) {
    require(y.shape.c % 4 == 0, "spd_inverse: channel count ", y.shape.c,
            " not divisible by 4");
    const int C = y.shape.c / 4;
    TensorT<Real> x(Shape4{y.shape.n, C, y.shape.h * 2, y.shape.w * 2});
    for (int n = 0; n < y.shape.n; ++n)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < y.shape.h; ++i)
          for (int j = 0; j < y.shape.w; ++j)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                x.at(n, c, 2 * i + dy, 2 * j + dx) = y.at(n, (2 * dy + dx) * C + c, i, j);
    return x;
  }

  static TensorT<Real> stack_subbands(const WaveletSubbandsT<Real>& sb) {
    const Shape4 hs = sb.ll.shape;
    TensorT<Real> y(Shape4{hs.n, 4 * hs.c, hs.h, hs.w});
    const TensorT<Real>* parts[4] = {&sb.ll, &sb.lh, &sb.hl, &sb.hh};
    for (int s = 0; s < 4; ++s)
      for (int n = 0; n < hs.n; ++n)
        for (int c = 0; c < hs.c; ++c)
          for (int yy = 0; yy < hs.h; ++yy)
            for (int xx = 0; xx < hs.w; ++xx)
              y.at(n, s * hs.c + c, yy, xx) = parts[s]->at(n, c, yy, xx);
    return y;
  }

  static WaveletSubbandsT<Real> unstack_subbands(const TensorT<Real>& y) {
    require(y.shape.c % 4 == 0, "unstack_subbands: channels ", y.shape.c,
            " not divisible by 4");
    const Shape4 hs{y.shape.n, y.shape.c / 4, y.shape.h, y.shape.w};
    WaveletSubbandsT<Real> sb{TensorT<Real>(hs), TensorT<Real>(hs), TensorT<Real>(hs),
                              TensorT<Real>(hs)};
    TensorT<Real>* parts[4] = {&sb.ll, &sb.lh, &sb.hl, &sb.hh};
    for (int s = 0; s < 4; ++s)
      for (int n = 0; n < hs.n; ++n)
        for (int c = 0; c < hs.c; ++c)
          for (int yy = 0; yy < hs.h; ++yy)
            for (int xx = 0; xx < hs.w; ++xx)
              parts[s]->at(n, c, yy, xx) = y.at(n, s * hs.c + c, yy, xx);
    return sb;
  }

  std::vector<Real>& ensure_grad(int i) {
    Node& nd = nodes_.at(i);
    if (nd.grad.empty()) nd.grad.assign(nd.val.data.size(), Real(0));
    return nd.grad;
  }
  std::vector<Real>& ensure_grad_im(int i) {
    Node& nd = nodes_.at(i);
    if (nd.grad_im.empty()) nd.grad_im.assign(nd.val.data.size(), Real(0));
    return nd.grad_im;
  }

 private:
  Id push(TensorT<Real> v, TensorT<Real>* bound, const char* op) {
    Node nd;
    nd.val = std::move(v);
    nd.bound = bound;
    nd.op = op;
    nodes_.push_back(std::move(nd));
    return Id{static_cast<int>(nodes_.size()) - 1};
  }

  Id push_complex(ComplexSpectrumT<Real> s, const char* op) {
    Node nd;
    nd.val = TensorT<Real>(s.shape);
    nd.val.data = std::move(s.re);
    nd.val_im = TensorT<Real>(s.shape);
    nd.val_im.data = std::move(s.im);
    nd.is_complex = true;
    nd.op = op;
    nodes_.push_back(std::move(nd));
    return Id{static_cast<int>(nodes_.size()) - 1};
  }

  Id binary(Id a, Id b, const char* op) {
    const TensorT<Real>& av = value(a);
    const TensorT<Real>& bv = value(b);
    const bool same = av.shape == bv.shape;
    const bool chan = (bv.shape.n == 1 || bv.shape.n == av.shape.n) &&
                      bv.shape.c == av.shape.c && bv.shape.h == 1 && bv.shape.w == 1 &&
                      !same;
    require(same || chan, op, ": operands must match exactly or broadcast per channel; got ",
            av.shape.str(), " vs ", bv.shape.str());
    const bool is_add = op[0] == 'a';
    TensorT<Real> y(av.shape);
    const std::int64_t hw = static_cast<std::int64_t>(av.shape.h) * av.shape.w;
    for (int n = 0; n < av.shape.n; ++n)
      for (int c = 0; c < av.shape.c; ++c) {
        const std::int64_t off = av.index(n, c, 0, 0);
        const std::int64_t boff = same ? off : (bv.shape.n == 1 ? c : bv.index(n, c, 0, 0));
        for (std::int64_t i = 0; i < hw; ++i) {
          const Real bvv = same ? bv.data[off + i] : bv.data[boff];
          y.data[off + i] = is_add ? av.data[off + i] + bvv : av.data[off + i] * bvv;
        }
      }
    Id id = push(std::move(y), nullptr, op);
    nodes_[id.i].back = [a, b, same, is_add](TapeT& t, int self) {
      Node& nd = t.nodes_[self];
      const TensorT<Real>& av = t.nodes_[a.i].val;
      const TensorT<Real>& bv = t.nodes_[b.i].val;
      auto& ga = t.ensure_grad(a.i);
      auto& gb = t.ensure_grad(b.i);
      const std::int64_t hw = static_cast<std::int64_t>(av.shape.h) * av.shape.w;
      for (int n = 0; n < av.shape.n; ++n)
        for (int c = 0; c < av.shape.c; ++c) {
          const std::int64_t off = av.index(n, c, 0, 0);
          const std::int64_t boff = same ? off : (bv.shape.n == 1 ? c : bv.index(n, c, 0, 0));
          for (std::int64_t i = 0; i < hw; ++i) {
            const Real g = nd.grad[off + i];
            if (is_add) {
              ga[off + i] += g;
              gb[same ? off + i : boff] += g;
            } else {
              ga[off + i] += g * (same ? bv.data[off + i] : bv.data[boff]);
              gb[same ? off + i : boff] += g * av.data[off + i];
            }
          }
        }
    };
    return id;
  }

  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;

}  // namespace sardet
