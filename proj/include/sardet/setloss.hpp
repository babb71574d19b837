#pragma once

#include "sardet/detector.hpp"
#include "sardet/hungarian.hpp"

// One-to-one set loss. Cost and matched-pair loss share the same three terms:
//   lambda_cls * BCE(obj, 1) + lambda_l1 * |b - g|_1 + lambda_iou * (1 - IoU)
// averaged over ground truths; unmatched predictions contribute the mean
// background BCE. Gradients are analytic (the assignment is held fixed).

namespace sardet {

struct LossWeights {
  double cls = 1.0, l1 = 5.0, iou = 2.0;
};

namespace setloss_detail {

inline double sigmoid_d(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double softplus_d(double v) {
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}
inline double sign_d(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

struct DecodedPred {
  double bcx, bcy, bw, bh;
  double sx, sy;         // sigmoid(tx), sigmoid(ty)
  bool w_clamped, h_clamped;
  double ew, eh;         // exp values after clamping
  double scale;          // stride / image_size
};

template <class Real>
DecodedPred decode_for_loss(const CellPred<Real>& p, int image_size) {
  DecodedPred d;
  d.sx = sigmoid_d(p.v[1]);
  d.sy = sigmoid_d(p.v[2]);
  const double ew_raw = std::exp(static_cast<double>(p.v[3]));
  const double eh_raw = std::exp(static_cast<double>(p.v[4]));
  d.w_clamped = ew_raw > kSizeClamp;
  d.h_clamped = eh_raw > kSizeClamp;
  d.ew = std::min(ew_raw, kSizeClamp);
  d.eh = std::min(eh_raw, kSizeClamp);
  d.scale = static_cast<double>(p.stride) / image_size;
  d.bcx = (p.cell_x + d.sx) * d.scale;
  d.bcy = (p.cell_y + d.sy) * d.scale;
  d.bw = d.ew * d.scale;
  d.bh = d.eh * d.scale;
  return d;
}

// IoU of the decoded box against a fixed ground truth plus its derivative
// with respect to (bcx, bcy, bw, bh); zero gradient once boxes are disjoint
inline double iou_with_grad(const DecodedPred& d, const Box& g, double grad[4]) {
  std::fill(grad, grad + 4, 0.0);
  const double ax1 = d.bcx - d.bw / 2, ax2 = d.bcx + d.bw / 2;
  const double ay1 = d.bcy - d.bh / 2, ay2 = d.bcy + d.bh / 2;
  const double bx1 = g.x1(), bx2 = g.x2(), by1 = g.y1(), by2 = g.y2();
  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double area_a = d.bw * d.bh;
  const double uni = area_a + g.area() - inter;
  const double iou_v = inter / uni;

  const double d_dI = (uni + inter) / (uni * uni);
  const double d_dA = -inter / (uni * uni);
  // corner contributions to the intersection
  const double dI_dax1 = (ax1 > bx1) ? -ih : 0.0;
  const double dI_dax2 = (ax2 < bx2) ? ih : 0.0;
  const double dI_day1 = (ay1 > by1) ? -iw : 0.0;
  const double dI_day2 = (ay2 < by2) ? iw : 0.0;
  const double diou_dax1 = d_dI * dI_dax1 + d_dA * (-d.bh);
  const double diou_dax2 = d_dI * dI_dax2 + d_dA * (d.bh);
  const double diou_day1 = d_dI * dI_day1 + d_dA * (-d.bw);
  const double diou_day2 = d_dI * dI_day2 + d_dA * (d.bw);
  grad[0] = diou_dax1 + diou_dax2;                  // d/d bcx
  grad[1] = diou_day1 + diou_day2;                  // d/d bcy
  grad[2] = (diou_dax2 - diou_dax1) / 2;            // d/d bw
  grad[3] = (diou_day2 - diou_day1) / 2;            // d/d bh
  return iou_v;
}

}  // namespace setloss_detail

// Loss over a flattened prediction list. When `grads` is non-null it receives
// d(loss)/d(raw head value) per prediction, aligned with preds' v[] layout.
template <class Real>
double set_loss_core(const std::vector<CellPred<Real>>& preds, const GroundTruth& gts,
                     const LossWeights& lw, int image_size,
                     std::vector<std::array<double, 5>>* grads) {
  using namespace setloss_detail;
  const std::size_t np = preds.size();
  const std::size_t ng = gts.size();
  require(np > 0, "set_loss: no predictions");
  require(ng <= np, "set_loss: ", ng, " ground truths exceed ", np, " predictions");
  validate_ground_truth(gts, "set_loss");

  if (grads) grads->assign(np, {0, 0, 0, 0, 0});

  std::vector<DecodedPred> dec(np);
  for (std::size_t i = 0; i < np; ++i) dec[i] = decode_for_loss(preds[i], image_size);

  std::vector<int> gt_to_pred;
  if (ng > 0) {
    std::vector<std::vector<double>> cost(np, std::vector<double>(ng));
    for (std::size_t i = 0; i < np; ++i) {
      const double bce1 = softplus_d(-static_cast<double>(preds[i].v[0]));
      for (std::size_t j = 0; j < ng; ++j) {
        const double l1 = std::abs(dec[i].bcx - gts[j].cx) + std::abs(dec[i].bcy - gts[j].cy) +
                          std::abs(dec[i].bw - gts[j].w) + std::abs(dec[i].bh - gts[j].h);
        double dummy[4];
        const double v = iou_with_grad(dec[i], gts[j], dummy);
        cost[i][j] = lw.cls * bce1 + lw.l1 * l1 + lw.iou * (1.0 - v);
      }
    }
    gt_to_pred = hungarian_match(cost);
  }

  std::vector<char> matched(np, 0);
  for (int i : gt_to_pred) matched[i] = 1;

  double loss = 0;
  if (ng > 0) {
    double match_loss = 0;
    for (std::size_t j = 0; j < ng; ++j) {
      const std::size_t i = static_cast<std::size_t>(gt_to_pred[j]);
      const DecodedPred& d = dec[i];
      const Box& g = gts[j];
      const double o = preds[i].v[0];
      double ig[4];
      const double iou_v = iou_with_grad(d, g, ig);
      const double l1 = std::abs(d.bcx - g.cx) + std::abs(d.bcy - g.cy) +
                        std::abs(d.bw - g.w) + std::abs(d.bh - g.h);
      match_loss += lw.cls * softplus_d(-o) + lw.l1 * l1 + lw.iou * (1.0 - iou_v);

      if (grads) {
        auto& gr = (*grads)[i];
        const double inv = 1.0 / static_cast<double>(ng);
        gr[0] += inv * lw.cls * (sigmoid_d(o) - 1.0);
        // combined derivative w.r.t. the decoded box
        const double d_bcx = lw.l1 * sign_d(d.bcx - g.cx) - lw.iou * ig[0];
        const double d_bcy = lw.l1 * sign_d(d.bcy - g.cy) - lw.iou * ig[1];
        const double d_bw = lw.l1 * sign_d(d.bw - g.w) - lw.iou * ig[2];
        const double d_bh = lw.l1 * sign_d(d.bh - g.h) - lw.iou * ig[3];
        gr[1] += inv * d_bcx * d.sx * (1.0 - d.sx) * d.scale;
        gr[2] += inv * d_bcy * d.sy * (1.0 - d.sy) * d.scale;
        gr[3] += inv * d_bw * (d.w_clamped ? 0.0 : d.ew) * d.scale;
        gr[4] += inv * d_bh * (d.h_clamped ? 0.0 : d.eh) * d.scale;
      }
    }
    loss += match_loss / static_cast<double>(ng);
  }

  const std::size_t nu = np - ng;
  if (nu > 0) {
    double bg = 0;
    for (std::size_t i = 0; i < np; ++i) {
      if (matched[i]) continue;
      const double o = preds[i].v[0];
      bg += softplus_d(o);
      if (grads) (*grads)[i][0] += sigmoid_d(o) / static_cast<double>(nu);
    }
    loss += bg / static_cast<double>(nu);
  }
  return loss;
}

// Records the loss on the tape; backward scatters the analytic gradients into
// the three head maps.
template <class Real>
typename TapeT<Real>::Id set_loss_op(TapeT<Real>& t,
                                     const std::array<typename TapeT<Real>::Id, 3>& maps,
                                     const GroundTruth& gts, const LossWeights& lw,
                                     int image_size) {
  const std::array<const TensorT<Real>*, 3> views{&t.value(maps[0]), &t.value(maps[1]),
                                                  &t.value(maps[2])};
  auto preds = flatten_head_maps<Real>(views);
  std::vector<std::array<double, 5>> grads;
  const double loss = set_loss_core(preds, gts, lw, image_size, &grads);

  TensorT<Real> v(Shape4{1, 1, 1, 1});
  v.data[0] = static_cast<Real>(loss);
  return t.custom(
      std::move(v),
      [maps, preds = std::move(preds), grads = std::move(grads)](TapeT<Real>& tp, int self) {
        const Real g = tp.nodes()[static_cast<std::size_t>(self)].grad[0];
        std::array<std::vector<Real>*, 3> gbuf{&tp.ensure_grad(maps[0].i),
                                               &tp.ensure_grad(maps[1].i),
                                               &tp.ensure_grad(maps[2].i)};
        for (std::size_t p = 0; p < preds.size(); ++p)
          for (int k = 0; k < 5; ++k)
            (*gbuf[preds[p].level])[preds[p].flat[k]] +=
                g * static_cast<Real>(grads[p][k]);
      },
      "set_loss");
}

}  // namespace sardet
