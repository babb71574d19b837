#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "sardet/layers.hpp"

// Expert-selection router: z = W_r . desc(X) + b_r, pi = softmax(z / tau),
// top-k selection with renormalization. The descriptor is the pluggable part:
// plain pooled features (mlp), spectral band statistics (frequency), a
// large-kernel spatial summary (spatial), or their concatenation (dual).

namespace sardet {

enum class RouterVariant { uniform, mlp, frequency_only, spatial_only, dual_branch };

inline const char* router_variant_name(RouterVariant v) {
  switch (v) {
    case RouterVariant::uniform: return "uniform";
    case RouterVariant::mlp: return "mlp";
    case RouterVariant::frequency_only: return "freq";
    case RouterVariant::spatial_only: return "spatial";
    case RouterVariant::dual_branch: return "dual";
  }
  return "?";
}

inline RouterVariant parse_router_variant(const std::string& s) {
  if (s == "uniform") return RouterVariant::uniform;
  if (s == "mlp") return RouterVariant::mlp;
  if (s == "freq") return RouterVariant::frequency_only;
  if (s == "spatial") return RouterVariant::spatial_only;
  if (s == "dual") return RouterVariant::dual_branch;
  fail("unknown router variant '", s, "' (expected dual|mlp|freq|spatial|uniform)");
}

template <class Real>
struct RouterDecisionT {
  std::vector<Real> logits;   // z, length E
  std::vector<Real> probs;    // pi on the simplex
  std::vector<int> selected;  // T: k largest-pi indices, ties to lowest index
  std::vector<Real> weights;  // renormalized pi over T, sums to 1
};

// top-k indices by descending probability, ties broken by lowest index
template <class Real>
std::vector<int> topk_indices(const std::vector<Real>& probs, int k) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[a] > probs[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

template <class Real>
struct RouterT {
  using Id = typename TapeT<Real>::Id;

  RouterVariant variant = RouterVariant::dual_branch;
  int channels = 0;
  int experts = 0;
  DepthwiseLayerT<Real> spatial_dw;  // 7x7, pad 3
  Conv2dLayerT<Real> head;           // W_r, b_r as a 1x1 conv over the descriptor

  static int descriptor_dim(RouterVariant v, int c) {
    switch (v) {
      case RouterVariant::mlp: return c;
      case RouterVariant::spatial_only: return c;
      case RouterVariant::frequency_only: return 2 * c;
      case RouterVariant::dual_branch: return 3 * c;
      case RouterVariant::uniform: return 0;
    }
    return 0;
  }

  void init(int c, int e, RouterVariant v, Rng& rng) {
    variant = v;
    channels = c;
    experts = e;
    if (v == RouterVariant::uniform) return;
    if (v == RouterVariant::spatial_only || v == RouterVariant::dual_branch)
      spatial_dw.init(c, 7, 1, 3, rng);
    head.init(descriptor_dim(v, c), e, 1, 1, 0, rng);
  }

  // 7x7 depthwise -> ReLU -> global average pool; one value per channel
  Id descriptor_spatial(TapeT<Real>& t, Id x) {
    return t.global_avg_pool(t.relu(spatial_dw.forward(t, x)));
  }

  // per-channel mean log(1+|spectrum|) over low and high radial halves (2C values)
  Id descriptor_frequency(TapeT<Real>& t, Id x) {
    const Shape4 s = t.value(x).shape;
    auto masks = radial_band_mask<Real>(s.h, s.w, 2);
    return t.band_masked_mean(t.complex_log1p_abs(t.fft2_op(x)), masks);
  }

  struct Routing {
    RouterDecisionT<Real> decision;
    std::vector<Id> gates;  // scalar nodes aligned with decision.selected
  };

  Routing route(TapeT<Real>& t, Id x, int k, Real tau) {
    require(experts >= 1, "route: router not initialized");
    require(k >= 1 && k <= experts, "route: k=", k, " must satisfy 1 <= k <= E=", experts);
    require(tau > Real(0), "route: tau must be positive, got ", tau);

    Routing out;
    if (variant == RouterVariant::uniform) {
      // bypasses the learned gate entirely: equal weights over all experts
      const Real w = Real(1) / static_cast<Real>(experts);
      out.decision.logits.assign(experts, Real(0));
      out.decision.probs.assign(experts, w);
      out.decision.selected.resize(experts);
      std::iota(out.decision.selected.begin(), out.decision.selected.end(), 0);
      out.decision.weights.assign(experts, w);
      for (int e = 0; e < experts; ++e)
        out.gates.push_back(t.constant(TensorT<Real>::full({1, 1, 1, 1}, w), "uniform_gate"));
      return out;
    }

    Id desc;
    switch (variant) {
      case RouterVariant::mlp:
        desc = t.global_avg_pool(x);
        break;
      case RouterVariant::spatial_only:
        desc = descriptor_spatial(t, x);
        break;
      case RouterVariant::frequency_only:
        desc = descriptor_frequency(t, x);
        break;
      case RouterVariant::dual_branch: {
        std::array<Id, 2> parts{descriptor_spatial(t, x), descriptor_frequency(t, x)};
        desc = t.concat_channels(parts);
        break;
      }
      default:
        fail("route: unreachable variant");
    }

    Id z = head.forward(t, desc);
    Id pi = t.softmax_temp(z, tau);
    out.decision.logits = t.value(z).data;
    out.decision.probs = t.value(pi).data;
    out.decision.selected = topk_indices(out.decision.probs, k);
    Id renorm = t.topk_renorm(pi, out.decision.selected);
    out.decision.weights = t.value(renorm).data;
    for (int i = 0; i < k; ++i) out.gates.push_back(t.slice_channel(renorm, i));
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor<Real>& fn) {
    if (variant == RouterVariant::uniform) return;
    if (variant == RouterVariant::spatial_only || variant == RouterVariant::dual_branch)
      spatial_dw.visit(prefix + ".spatial_dw", fn);
    head.visit(prefix + ".head", fn);
  }
};

}  // namespace sardet
