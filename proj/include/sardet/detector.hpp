#pragma once

#include <json.hpp>

#include <array>
#include <optional>

#include "sardet/boxes.hpp"
#include "sardet/metrics.hpp"
#include "sardet/moe.hpp"
#include "sardet/neck.hpp"

// Desk-scale detector: stem + four stride-2 stages, per-level expert banks on
// the deep backbone features, the enhancement pyramid, and a dense 1x1 head
// shared across levels (5 values per cell: objectness and box offsets).

namespace sardet {

struct ModelConfig {
  int image_size = 64;
  std::array<int, 4> channels{8, 16, 32, 32};  // F2..F5
  int neck_dim = 32;
  bool moe_p3 = false, moe_p4 = false, moe_p5 = false;
  FusionStrategy fusion = FusionStrategy::none;
  RouterVariant router = RouterVariant::dual_branch;
  int top_k = 2;
  double tau = 1.0;
  std::string expert_config = "full";
  std::uint64_t seed = 1;
  int attn_reduction = 4;
  int freq_bands = 4;
  double lambda_cls = 1.0, lambda_l1 = 5.0, lambda_iou = 2.0;
  double score_thresh = 0.5;
  bool log_input = true;  // log(1+x) compression of raw intensities

  bool moe_any() const { return moe_p3 || moe_p4 || moe_p5; }

  void validate() const {
    require(image_size >= 32 && image_size % 32 == 0,
            "model: image size must be a positive multiple of 32, got ", image_size);
    require(image_size >= 64 || !moe_p5,
            "model: expert bank on p5 needs image size >= 64 (F5 would be 1x1)");
    require(top_k >= 1, "model: top_k must be >= 1");
    require(tau > 0, "model: tau must be positive");
    require(neck_dim > 0 && neck_dim % 2 == 0, "model: neck dim must be positive and even");
    ablation_banks<float>(expert_config);  // validates the name
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"channels", c.channels},
                     {"neck_dim", c.neck_dim},
                     {"moe_p3", c.moe_p3},
                     {"moe_p4", c.moe_p4},
                     {"moe_p5", c.moe_p5},
                     {"fusion", fusion_name(c.fusion)},
                     {"router", router_variant_name(c.router)},
                     {"top_k", c.top_k},
                     {"tau", c.tau},
                     {"expert_config", c.expert_config},
                     {"seed", c.seed},
                     {"attn_reduction", c.attn_reduction},
                     {"freq_bands", c.freq_bands},
                     {"lambda_cls", c.lambda_cls},
                     {"lambda_l1", c.lambda_l1},
                     {"lambda_iou", c.lambda_iou},
                     {"score_thresh", c.score_thresh},
                     {"log_input", c.log_input}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("channels").get_to(c.channels);
  j.at("neck_dim").get_to(c.neck_dim);
  j.at("moe_p3").get_to(c.moe_p3);
  j.at("moe_p4").get_to(c.moe_p4);
  j.at("moe_p5").get_to(c.moe_p5);
  c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  c.router = parse_router_variant(j.at("router").get<std::string>());
  j.at("top_k").get_to(c.top_k);
  j.at("tau").get_to(c.tau);
  j.at("expert_config").get_to(c.expert_config);
  j.at("seed").get_to(c.seed);
  j.at("attn_reduction").get_to(c.attn_reduction);
  j.at("freq_bands").get_to(c.freq_bands);
  j.at("lambda_cls").get_to(c.lambda_cls);
  j.at("lambda_l1").get_to(c.lambda_l1);
  j.at("lambda_iou").get_to(c.lambda_iou);
  j.at("score_thresh").get_to(c.score_thresh);
  j.at("log_input").get_to(c.log_input);
}

constexpr std::array<int, 3> kLevelStrides{8, 16, 32};

template <class Real>
struct DetectorT {
  using Id = typename TapeT<Real>::Id;

  ModelConfig cfg;
  Conv2dLayerT<Real> stem;
  struct Stage {
    Conv2dLayerT<Real> down, refine;
  };
  std::array<Stage, 4> stages;
  std::array<std::optional<MoeLayerT<Real>>, 3> moe;  // over F3, F4, F5
  NeckT<Real> neck;
  Conv2dLayerT<Real> head;  // shared across levels: d -> 5 per cell

  void init(const ModelConfig& c) {
    c.validate();
    cfg = c;
    Rng rng(c.seed);
    stem.init(1, c.channels[0], 3, 2, 0, rng);
    int cin = c.channels[0];
    for (int i = 0; i < 4; ++i) {
      const int cout = c.channels[i];
      stages[i].down.init(cin, cout, 3, 2, 0, rng);
      stages[i].refine.init(cout, cout, 3, 1, 1, rng);
      cin = cout;
    }
    auto banks = ablation_banks<Real>(c.expert_config, c.top_k, static_cast<Real>(c.tau),
                                      c.router);
    const ExpertHyper hp{c.attn_reduction, c.freq_bands};
    const bool active[3] = {c.moe_p3, c.moe_p4, c.moe_p5};
    for (int i = 0; i < 3; ++i) {
      if (!active[i]) continue;
      moe[i].emplace();
      moe[i]->init(c.channels[i + 1], banks[i], hp, rng);
    }
    neck.init(c.channels[0], c.channels[1], c.channels[2], c.channels[3], c.neck_dim,
              c.fusion, rng);
    head.init(c.neck_dim, 5, 1, 1, 0, rng);
  }

  // 3x3 stride-2 with SAME-style asymmetric padding (exact-division contract)
  Id down2(TapeT<Real>& t, Conv2dLayerT<Real>& conv, Id x) {
    return conv.forward(t, t.zero_pad(x, 1, 0, 1, 0));
  }

  struct Features {
    Id f2, f3, f4, f5;
  };

  Features backbone_forward(TapeT<Real>& t, Id image) {
    Id x = cfg.log_input ? t.log1p_op(image) : image;
    x = t.relu(down2(t, stem, x));
    std::array<Id, 4> f;
    for (int i = 0; i < 4; ++i) {
      x = t.relu(stages[i].down.forward(t, t.zero_pad(x, 1, 0, 1, 0)));
      x = t.relu(stages[i].refine.forward(t, x));
      f[i] = x;
    }
    return {f[0], f[1], f[2], f[3]};
  }

  struct ForwardResult {
    Features features;
    std::array<Id, 3> enhanced;  // F3..F5 after their banks (or untouched)
    typename NeckT<Real>::Pyramid pyramid;
    std::array<Id, 3> head_maps;  // (1,5,h,w) per level
    std::vector<std::pair<PyramidLevel, RouterDecisionT<Real>>> decisions;
  };

  ForwardResult forward(TapeT<Real>& t, Id image) {
    ForwardResult out;
    out.features = backbone_forward(t, image);
    const std::array<Id, 3> deep{out.features.f3, out.features.f4, out.features.f5};
    for (int i = 0; i < 3; ++i) {
      if (moe[i]) {
        auto fwd = moe[i]->forward(t, deep[i]);
        out.enhanced[i] = fwd.y;
        out.decisions.emplace_back(static_cast<PyramidLevel>(i), std::move(fwd.decision));
      } else {
        out.enhanced[i] = deep[i];
      }
    }
    out.pyramid =
        neck.build(t, out.features.f2, out.enhanced[0], out.enhanced[1], out.enhanced[2]);
    out.head_maps = {head.forward(t, out.pyramid.p3), head.forward(t, out.pyramid.p4),
                     head.forward(t, out.pyramid.p5)};
    return out;
  }

  void visit(const ParamVisitor<Real>& fn) {
    stem.visit("stem", fn);
    for (int i = 0; i < 4; ++i) {
      const std::string p = "stage" + std::to_string(i + 2);  // named by output level
      stages[i].down.visit(p + ".down", fn);
      stages[i].refine.visit(p + ".refine", fn);
    }
    for (int i = 0; i < 3; ++i)
      if (moe[i]) moe[i]->visit(std::string("moe.") + level_name(static_cast<PyramidLevel>(i)), fn);
    neck.visit("neck", fn);
    head.visit("head", fn);
  }

  std::vector<std::pair<std::string, TensorT<Real>*>> named_params() {
    std::vector<std::pair<std::string, TensorT<Real>*>> out;
    visit([&](const std::string& name, TensorT<Real>& t) { out.emplace_back(name, &t); });
    return out;
  }

  void zero_grads() {
    for (auto& [name, p] : named_params()) p->zero_grad();
  }

  void reset_stats() {
    for (auto& m : moe)
      if (m) m->stats.reset(static_cast<int>(m->sparse.size()));
  }
};

using Detector = DetectorT<float>;

// ---- decoding -------------------------------------------------------------

// Raw per-cell outputs: objectness logit then (tx, ty, tw, th).
template <class Real>
struct CellPred {
  int level = 0, cell_y = 0, cell_x = 0, stride = 8;
  Real v[5] = {0, 0, 0, 0, 0};
  std::int64_t flat[5] = {0, 0, 0, 0, 0};  // offsets into the level's head map
};

template <class Real>
std::vector<CellPred<Real>> flatten_head_maps(
    const std::array<const TensorT<Real>*, 3>& maps) {
  std::vector<CellPred<Real>> out;
  for (int level = 0; level < 3; ++level) {
    const TensorT<Real>& m = *maps[level];
    require(m.shape.n == 1 && m.shape.c == 5, "head map must be (1,5,h,w), got ",
            m.shape.str());
    for (int y = 0; y < m.shape.h; ++y)
      for (int x = 0; x < m.shape.w; ++x) {
        CellPred<Real> p;
        p.level = level;
        p.cell_y = y;
        p.cell_x = x;
        p.stride = kLevelStrides[level];
        for (int k = 0; k < 5; ++k) {
          p.flat[k] = m.index(0, k, y, x);
          p.v[k] = m.data[p.flat[k]];
        }
        out.push_back(p);
      }
  }
  return out;
}

// (tx,ty) place the center inside the cell via sigmoid; (tw,th) scale the
// stride via exp, clamped at 4x stride so early training cannot blow up
constexpr double kSizeClamp = 4.0;

template <class Real>
Box decode_box(const CellPred<Real>& p, int image_size) {
  const double sx = 1.0 / (1.0 + std::exp(-static_cast<double>(p.v[1])));
  const double sy = 1.0 / (1.0 + std::exp(-static_cast<double>(p.v[2])));
  const double ew = std::min(std::exp(static_cast<double>(p.v[3])), kSizeClamp);
  const double eh = std::min(std::exp(static_cast<double>(p.v[4])), kSizeClamp);
  const double s = static_cast<double>(p.stride) / image_size;
  return Box{(p.cell_x + sx) * s, (p.cell_y + sy) * s, ew * s, eh * s};
}

template <class Real>
double objectness_score(const CellPred<Real>& p) {
  return 1.0 / (1.0 + std::exp(-static_cast<double>(p.v[0])));
}

// All decoded cells of one image, scores attached; detections kept only when
// score > thresh (strict), boxes clipped into the unit square, sorted by
// descending score.
template <class Real>
std::vector<Detection> decode_detections(const std::array<const TensorT<Real>*, 3>& maps,
                                         int image_size, double score_thresh) {
  std::vector<Detection> dets;
  for (const auto& p : flatten_head_maps<Real>(maps)) {
    const double score = objectness_score(p);
    if (score > score_thresh)
      dets.push_back(Detection{0, decode_box(p, image_size).clipped(), score});
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return dets;
}

template <class Real>
std::vector<Detection> predict(DetectorT<Real>& model, const TensorT<Real>& image,
                               double score_thresh) {
  TapeT<Real> t;
  auto fwd = model.forward(t, t.constant(image));
  const std::array<const TensorT<Real>*, 3> maps{
      &t.value(fwd.head_maps[0]), &t.value(fwd.head_maps[1]), &t.value(fwd.head_maps[2])};
  return decode_detections<Real>(maps, model.cfg.image_size, score_thresh);
}

}  // namespace sardet
