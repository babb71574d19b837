#pragma once

#include <string>

#include "sardet/layers.hpp"

// Space-to-depth enhancement pyramid: lateral 1x1 projections, a top-down
// pass, and an additive injection of stride-4 detail into the stride-8 level.
// The spd strategy is the lossless route; strided and strip are the lossy
// baselines it is compared against.

namespace sardet {

enum class FusionStrategy { none, strided, strip, spd };

inline const char* fusion_name(FusionStrategy f) {
  switch (f) {
    case FusionStrategy::none: return "none";
    case FusionStrategy::strided: return "strided";
    case FusionStrategy::strip: return "strip";
    case FusionStrategy::spd: return "spd";
  }
  return "?";
}

inline FusionStrategy parse_fusion(const std::string& s) {
  if (s == "none") return FusionStrategy::none;
  if (s == "strided") return FusionStrategy::strided;
  if (s == "strip") return FusionStrategy::strip;
  if (s == "spd") return FusionStrategy::spd;
  fail("unknown fusion strategy '", s, "' (expected spd|strided|strip|none)");
}

template <class Real>
struct NeckT {
  using Id = typename TapeT<Real>::Id;

  int d = 32;
  FusionStrategy strategy = FusionStrategy::none;
  Conv2dLayerT<Real> lat3, lat4, lat5;
  Conv2dLayerT<Real> smooth3, smooth4, smooth5;
  // fusion-specific parameters; only the active strategy's are initialized
  Conv2dLayerT<Real> spd_proj;      // 1x1 on 4*C2 channels
  Conv2dLayerT<Real> strided_proj;  // 3x3 stride 2 (SAME-padded via zero_pad)
  DepthwiseLayerT<Real> strip_h, strip_v;  // 1x7 then 7x1
  Conv2dLayerT<Real> strip_proj;    // 2x2 stride 2

  void init(int c2, int c3, int c4, int c5, int d_, FusionStrategy strat, Rng& rng) {
    d = d_;
    strategy = strat;
    lat3.init(c3, d, 1, 1, 0, rng);
    lat4.init(c4, d, 1, 1, 0, rng);
    lat5.init(c5, d, 1, 1, 0, rng);
    smooth3.init(d, d, 3, 1, 1, rng);
    smooth4.init(d, d, 3, 1, 1, rng);
    smooth5.init(d, d, 3, 1, 1, rng);
    switch (strategy) {
      case FusionStrategy::spd:
        spd_proj.init(4 * c2, d, 1, 1, 0, rng);
        break;
      case FusionStrategy::strided:
        strided_proj.init(c2, d, 3, 2, 0, rng);
        break;
      case FusionStrategy::strip:
        strip_h.channels = c2;
        strip_h.w = TensorT<Real>(Shape4{c2, 1, 1, 7});
        init_uniform_fanin(strip_h.w, 7, rng);
        strip_v.channels = c2;
        strip_v.w = TensorT<Real>(Shape4{c2, 1, 7, 1});
        init_uniform_fanin(strip_v.w, 7, rng);
        strip_proj.init(c2, d, 2, 2, 0, rng);
        break;
      case FusionStrategy::none:
        break;
    }
  }

  // additive stride-4 -> stride-8 injection; the fused result keeps F3's shape
  Id fuse_p2(TapeT<Real>& t, Id f2, Id f3) {
    const Shape4 s2 = t.value(f2).shape;
    const Shape4 s3 = t.value(f3).shape;
    if (strategy == FusionStrategy::none) return f3;
    require(s2.h == 2 * s3.h && s2.w == 2 * s3.w,
            "fuse_p2: stride-4 extents ", s2.str(), " must be exactly twice ", s3.str());
    require(s3.c == d, "fuse_p2: target features must have d=", d, " channels, got ",
            s3.c);
    Id detail;
    switch (strategy) {
      case FusionStrategy::spd:
        detail = spd_proj.forward(t, t.spd(f2));
        break;
      case FusionStrategy::strided:
        // SAME-style asymmetric pad keeps the exact-division conv contract
        detail = strided_proj.forward(t, t.zero_pad(f2, 1, 0, 1, 0));
        break;
      case FusionStrategy::strip: {
        Id h = t.depthwise_conv2d(t.zero_pad(f2, 0, 0, 3, 3), t.param(&strip_h.w), 1, 0);
        Id v = t.depthwise_conv2d(t.zero_pad(h, 3, 3, 0, 0), t.param(&strip_v.w), 1, 0);
        detail = strip_proj.forward(t, v);
        break;
      }
      default:
        fail("fuse_p2: unreachable strategy");
    }
    return t.add(detail, f3);
  }

  struct Pyramid {
    Id p3, p4, p5;  // strides 8, 16, 32, all with d channels
  };

  Pyramid build(TapeT<Real>& t, Id f2, Id f3, Id f4, Id f5) {
    Id l5 = lat5.forward(t, f5);
    Id p5 = smooth5.forward(t, l5);
    Id l4 = t.add(lat4.forward(t, f4), t.upsample_nearest2x(p5));
    Id p4 = smooth4.forward(t, l4);
    Id l3 = t.add(lat3.forward(t, f3), t.upsample_nearest2x(p4));
    Id p3 = smooth3.forward(t, fuse_p2(t, f2, l3));
    return {p3, p4, p5};
  }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    lat3.visit(p + ".lat3", fn);
    lat4.visit(p + ".lat4", fn);
    lat5.visit(p + ".lat5", fn);
    smooth3.visit(p + ".smooth3", fn);
    smooth4.visit(p + ".smooth4", fn);
    smooth5.visit(p + ".smooth5", fn);
    switch (strategy) {
      case FusionStrategy::spd:
        spd_proj.visit(p + ".spd_proj", fn);
        break;
      case FusionStrategy::strided:
        strided_proj.visit(p + ".strided_proj", fn);
        break;
      case FusionStrategy::strip:
        strip_h.visit(p + ".strip_h", fn);
        strip_v.visit(p + ".strip_v", fn);
        strip_proj.visit(p + ".strip_proj", fn);
        break;
      case FusionStrategy::none:
        break;
    }
  }

  void zero_weights() {
    for (auto* c : {&lat3, &lat4, &lat5, &smooth3, &smooth4, &smooth5, &spd_proj,
                    &strided_proj, &strip_proj})
      if (c->w.numel() > 0) c->zero_weights();
    for (auto* dwl : {&strip_h, &strip_v})
      if (dwl->w.numel() > 0) std::fill(dwl->w.data.begin(), dwl->w.data.end(), Real(0));
  }
};

// standalone space-to-depth views of the tape helpers (bit-exact permutations)
template <class Real>
TensorT<Real> spd(const TensorT<Real>& x) {
  return TapeT<Real>::spd_fwd(x);
}
template <class Real>
TensorT<Real> spd_inverse(const TensorT<Real>& y) {
  return TapeT<Real>::spd_inverse_fwd(y);
}

}  // namespace sardet
