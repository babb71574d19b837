#pragma once

#include <string>
#include <variant>

#include "sardet/layers.hpp"

// The expert families. Every expert is a shape-preserving residual transform:
// with its merge projection zeroed it is the exact identity, so an untrained
// bank cannot destroy features.

namespace sardet {

enum class ExpertKind { shared, wavelet, spatial, frequency, hybrid };

inline const char* expert_kind_name(ExpertKind k) {
  switch (k) {
    case ExpertKind::shared: return "shared";
    case ExpertKind::wavelet: return "wavelet";
    case ExpertKind::spatial: return "spatial";
    case ExpertKind::frequency: return "frequency";
    case ExpertKind::hybrid: return "hybrid";
  }
  return "?";
}

struct ExpertHyper {
  int attn_reduction = 4;  // channel reduction in the shared expert gate
  int freq_bands = 4;      // radial bands in the frequency expert
};

// 3x3 conv + channel attention gate fed by pooled and spectral statistics.
template <class Real>
struct SharedExpertT {
  using Id = typename TapeT<Real>::Id;
  Conv2dLayerT<Real> conv;
  Conv2dLayerT<Real> fc1, fc2;

  void init(int c, const ExpertHyper& hp, Rng& rng) {
    require(c % hp.attn_reduction == 0, "shared expert: C=", c,
            " not divisible by attention reduction r=", hp.attn_reduction);
    conv.init(c, c, 3, 1, 1, rng);
    fc1.init(2 * c, c / hp.attn_reduction, 1, 1, 0, rng);
    fc2.init(c / hp.attn_reduction, c, 1, 1, 0, rng);
  }

  Id forward(TapeT<Real>& t, Id x) {
    Id h = t.relu(conv.forward(t, x));
    const Shape4 s = t.value(h).shape;
    auto all_mask = radial_band_mask<Real>(s.h, s.w, 1);
    Id pooled = t.global_avg_pool(h);
    Id spectral = t.band_masked_mean(t.complex_log1p_abs(t.fft2_op(h)), all_mask);
    std::array<Id, 2> parts{pooled, spectral};
    Id gates = t.sigmoid(fc2.forward(t, t.relu(fc1.forward(t, t.concat_channels(parts)))));
    return t.add(x, t.mul(h, gates));
  }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    conv.visit(p + ".conv", fn);
    fc1.visit(p + ".fc1", fn);
    fc2.visit(p + ".fc2", fn);
  }
};

// Haar decomposition, learnable soft-thresholding of the detail subbands,
// per-channel subband scaling, reconstruction, 1x1 merge.
template <class Real>
struct WaveletExpertT {
  using Id = typename TapeT<Real>::Id;
  TensorT<Real> scales;   // (1,4C,1,1) over [LL,LH,HL,HH]
  TensorT<Real> thr_pre;  // (1,3C,1,1), softplus-mapped thresholds for details
  Conv2dLayerT<Real> merge;
  int channels = 0;

  void init(int c, const ExpertHyper&, Rng& rng) {
    channels = c;
    scales = TensorT<Real>::full({1, 4 * c, 1, 1}, Real(1));
    scales.mark_param();
    thr_pre = TensorT<Real>::full({1, 3 * c, 1, 1}, Real(-4));  // softplus(-4) ~ 0.018
    thr_pre.mark_param();
    merge.init(c, c, 1, 1, 0, rng);
  }

  // reconstruction before the merge conv
  Id core(TapeT<Real>& t, Id x) {
    const int c = t.value(x).shape.c;
    require(c == channels, "wavelet expert: C=", c, " != configured ", channels);
    Id sb = t.haar_dwt_stack(x);
    std::array<Id, 2> thr_parts{t.constant(TensorT<Real>(Shape4{1, c, 1, 1})),
                                t.softplus(t.param(&thr_pre))};
    Id thresholds = t.concat_channels(thr_parts);  // zero for LL: passes through
    Id shrunk = t.soft_threshold(sb, thresholds);
    Id scaled = t.mul(shrunk, t.param(&scales));
    return t.haar_idwt_stack(scaled);
  }

  Id forward(TapeT<Real>& t, Id x) { return t.add(x, merge.forward(t, core(t, x))); }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    fn(p + ".scales", scales);
    fn(p + ".thr_pre", thr_pre);
    merge.visit(p + ".merge", fn);
  }
};

// ghost-style split: cheap depthwise transform of a primary projection
template <class Real>
struct SpatialExpertT {
  using Id = typename TapeT<Real>::Id;
  Conv2dLayerT<Real> primary;  // 1x1, C -> C/2
  DepthwiseLayerT<Real> cheap;  // 3x3 on C/2
  Conv2dLayerT<Real> merge;    // 1x1, C -> C

  void init(int c, const ExpertHyper&, Rng& rng) {
    require(c % 2 == 0, "spatial expert: C=", c, " must be even for the 1:1 ghost split");
    primary.init(c, c / 2, 1, 1, 0, rng);
    cheap.init(c / 2, 3, 1, 1, rng);
    merge.init(c, c, 1, 1, 0, rng);
  }

  Id forward(TapeT<Real>& t, Id x) {
    Id p = t.relu(primary.forward(t, x));
    Id g = t.relu(cheap.forward(t, p));
    std::array<Id, 2> parts{p, g};
    return t.add(x, merge.forward(t, t.concat_channels(parts)));
  }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    primary.visit(p + ".primary", fn);
    cheap.visit(p + ".cheap", fn);
    merge.visit(p + ".merge", fn);
  }
};

// learnable per-(band, channel) gains on radial spectrum annuli
template <class Real>
struct FrequencyExpertT {
  using Id = typename TapeT<Real>::Id;
  TensorT<Real> gains;  // (bands, C, 1, 1), all-pass at init
  Conv2dLayerT<Real> merge;
  int bands = 4;

  void init(int c, const ExpertHyper& hp, Rng& rng) {
    bands = hp.freq_bands;
    gains = TensorT<Real>::full({bands, c, 1, 1}, Real(1));
    gains.mark_param();
    merge.init(c, c, 1, 1, 0, rng);
  }

  Id core(TapeT<Real>& t, Id x) {
    const Shape4 s = t.value(x).shape;
    auto masks = radial_band_mask<Real>(s.h, s.w, bands);
    return t.ifft2_real(t.complex_band_scale(t.fft2_op(x), t.param(&gains), masks));
  }

  Id forward(TapeT<Real>& t, Id x) { return t.add(x, merge.forward(t, core(t, x))); }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    fn(p + ".gains", gains);
    merge.visit(p + ".merge", fn);
  }
};

// parallel frequency and wavelet cores averaged before one merge conv
template <class Real>
struct HybridExpertT {
  using Id = typename TapeT<Real>::Id;
  FrequencyExpertT<Real> freq;
  WaveletExpertT<Real> wavelet;
  Conv2dLayerT<Real> merge;

  void init(int c, const ExpertHyper& hp, Rng& rng) {
    Rng fr(rng.next_u64());
    freq.init(c, hp, fr);
    freq.merge = Conv2dLayerT<Real>{};  // branch cores only; single merge below
    Rng wr(rng.next_u64());
    wavelet.init(c, hp, wr);
    wavelet.merge = Conv2dLayerT<Real>{};
    merge.init(c, c, 1, 1, 0, rng);
  }

  Id forward(TapeT<Real>& t, Id x) {
    Id avg = t.scale(t.add(freq.core(t, x), wavelet.core(t, x)), Real(0.5));
    return t.add(x, merge.forward(t, avg));
  }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    fn(p + ".freq.gains", freq.gains);
    fn(p + ".wavelet.scales", wavelet.scales);
    fn(p + ".wavelet.thr_pre", wavelet.thr_pre);
    merge.visit(p + ".merge", fn);
  }
};

template <class Real>
struct ExpertT {
  using Id = typename TapeT<Real>::Id;
  ExpertKind kind = ExpertKind::shared;
  std::variant<SharedExpertT<Real>, WaveletExpertT<Real>, SpatialExpertT<Real>,
               FrequencyExpertT<Real>, HybridExpertT<Real>>
      impl;

  static ExpertT make(ExpertKind k, int c, const ExpertHyper& hp, Rng& rng) {
    ExpertT e;
    e.kind = k;
    switch (k) {
      case ExpertKind::shared: {
        SharedExpertT<Real> x;
        x.init(c, hp, rng);
        e.impl = std::move(x);
        break;
      }
      case ExpertKind::wavelet: {
        WaveletExpertT<Real> x;
        x.init(c, hp, rng);
        e.impl = std::move(x);
        break;
      }
      case ExpertKind::spatial: {
        SpatialExpertT<Real> x;
        x.init(c, hp, rng);
        e.impl = std::move(x);
        break;
      }
      case ExpertKind::frequency: {
        FrequencyExpertT<Real> x;
        x.init(c, hp, rng);
        e.impl = std::move(x);
        break;
      }
      case ExpertKind::hybrid: {
        HybridExpertT<Real> x;
        x.init(c, hp, rng);
        e.impl = std::move(x);
        break;
      }
    }
    return e;
  }

  Id forward(TapeT<Real>& t, Id x) {
    return std::visit([&](auto& e) { return e.forward(t, x); }, impl);
  }

  void visit(const std::string& p, const ParamVisitor<Real>& fn) {
    std::visit([&](auto& e) { e.visit(p, fn); }, impl);
  }

  // zeroes the final projection, making the expert the exact identity
  void zero_merge() {
    std::visit(
        [](auto& e) {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, SharedExpertT<Real>>) {
            e.conv.zero_weights();
            e.fc1.zero_weights();
            e.fc2.zero_weights();
          } else {
            e.merge.zero_weights();
          }
        },
        impl);
  }
};

}  // namespace sardet
