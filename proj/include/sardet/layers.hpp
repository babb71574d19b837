#pragma once

#include <functional>
#include <string>

#include "sardet/tape.hpp"

namespace sardet {

template <class Real>
using ParamVisitor = std::function<void(const std::string&, TensorT<Real>&)>;

// Weights init uniform in +-sqrt(1/fan_in); biases start at zero.
template <class Real>
void init_uniform_fanin(TensorT<Real>& w, int fan_in, Rng& rng) {
  const Real bound = std::sqrt(Real(1) / static_cast<Real>(fan_in));
  for (auto& v : w.data) v = static_cast<Real>(rng.uniform(-bound, bound));
  w.mark_param();
}

template <class Real>
struct Conv2dLayerT {
  int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
  bool has_bias = true;
  TensorT<Real> w, b;

  using Id = typename TapeT<Real>::Id;

  void init(int cin_, int cout_, int k_, int stride_, int pad_, Rng& rng,
            bool bias = true) {
    cin = cin_;
    cout = cout_;
    k = k_;
    stride = stride_;
    pad = pad_;
    has_bias = bias;
    w = TensorT<Real>(Shape4{cout, cin, k, k});
    init_uniform_fanin(w, cin * k * k, rng);
    if (has_bias) {
      b = TensorT<Real>(Shape4{1, 1, 1, cout});
      b.mark_param();
    }
  }

  void zero_weights() {
    std::fill(w.data.begin(), w.data.end(), Real(0));
    if (has_bias) std::fill(b.data.begin(), b.data.end(), Real(0));
  }

  Id forward(TapeT<Real>& t, Id x) {
    return t.conv2d(x, t.param(&w), has_bias ? t.param(&b) : Id{}, stride, pad);
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& fn) {
    fn(prefix + ".w", w);
    if (has_bias) fn(prefix + ".b", b);
  }
};

template <class Real>
struct DepthwiseLayerT {
  int channels = 0, k = 1, stride = 1, pad = 0;
  TensorT<Real> w;

  using Id = typename TapeT<Real>::Id;

  void init(int c, int k_, int stride_, int pad_, Rng& rng) {
    channels = c;
    k = k_;
    stride = stride_;
    pad = pad_;
    w = TensorT<Real>(Shape4{c, 1, k, k});
    init_uniform_fanin(w, k * k, rng);
  }

  Id forward(TapeT<Real>& t, Id x) {
    return t.depthwise_conv2d(x, t.param(&w), stride, pad);
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& fn) {
    fn(prefix + ".w", w);
  }
};

}  // namespace sardet
