#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

#include "sardet/boxes.hpp"

// Detection metrics: greedy matching, 101-point interpolated average
// precision, the 0.50:0.05:0.95 threshold sweep, and the small-object cut.

namespace sardet {

struct Detection {
  int image = 0;
  Box box;
  double score = 0;
};

struct EvalResult {
  double map50 = 0;
  double map5095 = 0;
  std::optional<double> ap_small;  // absent when no small ground truths exist
  double precision = 0;
  double recall = 0;
};

struct APResult {
  double ap = 0;
  bool defined = false;  // false when there are no counted ground truths
};

namespace detail {

// deterministic evaluation order: score descending, then image, then arrival
inline std::vector<int> sorted_det_order(const std::vector<Detection>& dets) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (dets[a].image != dets[b].image) return dets[a].image < dets[b].image;
    return a < b;
  });
  return order;
}

}  // namespace detail

// Greedy matching per image, highest score first, one match per ground truth,
// match requires IoU >= thresh (best IoU among the unmatched wins). Ground
// truths flagged in `ignore` do not count: detections overlapping only them
// are dropped from the PR curve instead of becoming false positives.
inline APResult average_precision(const std::vector<Detection>& dets,
                                  const std::vector<GroundTruth>& gts, double iou_thresh,
                                  const std::vector<std::vector<char>>* ignore = nullptr) {
  std::size_t n_counted = 0;
  for (std::size_t img = 0; img < gts.size(); ++img)
    for (std::size_t j = 0; j < gts[img].size(); ++j)
      if (!ignore || !(*ignore)[img][j]) ++n_counted;
  if (n_counted == 0) return {0.0, false};

  std::vector<std::vector<char>> matched(gts.size());
  for (std::size_t img = 0; img < gts.size(); ++img)
    matched[img].assign(gts[img].size(), 0);

  std::vector<char> is_tp;
  is_tp.reserve(dets.size());
  for (int idx : detail::sorted_det_order(dets)) {
    const Detection& det = dets[idx];
    require(det.image >= 0 && det.image < static_cast<int>(gts.size()),
            "average_precision: detection references image ", det.image,
            " outside the ground-truth set");
    const GroundTruth& gt = gts[det.image];
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (matched[det.image][j]) continue;
      if (ignore && (*ignore)[det.image][j]) continue;
      const double v = iou(det.box, gt[j]);
      if (v >= best_iou) {
        best_iou = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      matched[det.image][best] = 1;
      is_tp.push_back(1);
      continue;
    }
    if (ignore) {
      bool on_ignored = false;
      for (std::size_t j = 0; j < gt.size(); ++j)
        if ((*ignore)[det.image][j] && iou(det.box, gt[j]) >= iou_thresh) {
          on_ignored = true;
          break;
        }
      if (on_ignored) continue;  // neither TP nor FP
    }
    is_tp.push_back(0);
  }

  // precision envelope sampled at 101 recall points
  std::vector<double> prec, rec;
  int tp = 0, fp = 0;
  for (char t : is_tp) {
    t ? ++tp : ++fp;
    prec.push_back(static_cast<double>(tp) / (tp + fp));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_counted));
  }
  double ap = 0;
  for (int r = 0; r <= 100; ++r) {
    const double target = r / 100.0;
    double best = 0;
    for (std::size_t i = 0; i < prec.size(); ++i)
      if (rec[i] >= target - 1e-12) best = std::max(best, prec[i]);
    ap += best;
  }
  return {ap / 101.0, true};
}

// precision/recall at a fixed operating point (score > thresh, IoU >= iou_thresh)
inline std::pair<double, double> precision_recall_at(const std::vector<Detection>& dets,
                                                     const std::vector<GroundTruth>& gts,
                                                     double score_thresh,
                                                     double iou_thresh) {
  std::vector<std::vector<char>> matched(gts.size());
  std::size_t n_gt = 0;
  for (std::size_t img = 0; img < gts.size(); ++img) {
    matched[img].assign(gts[img].size(), 0);
    n_gt += gts[img].size();
  }
  int tp = 0, fp = 0;
  for (int idx : detail::sorted_det_order(dets)) {
    const Detection& det = dets[idx];
    if (det.score <= score_thresh) continue;
    const GroundTruth& gt = gts[det.image];
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (matched[det.image][j]) continue;
      const double v = iou(det.box, gt[j]);
      if (v >= best_iou) {
        best_iou = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      matched[det.image][best] = 1;
      ++tp;
    } else {
      ++fp;
    }
  }
  const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  const double recall = n_gt > 0 ? static_cast<double>(tp) / static_cast<double>(n_gt) : 0.0;
  return {precision, recall};
}

inline const std::vector<double>& coco_thresholds() {
  static const std::vector<double> t{0.50, 0.55, 0.60, 0.65, 0.70,
                                     0.75, 0.80, 0.85, 0.90, 0.95};
  return t;
}

// map50, map50:95, AP over small ground truths (pixel area < 32^2), and the
// fixed-operating-point precision/recall
inline EvalResult coco_map(const std::vector<Detection>& dets,
                           const std::vector<GroundTruth>& gts, int image_size,
                           double pr_score_thresh = 0.5) {
  EvalResult out;

  double sum = 0;
  for (double t : coco_thresholds()) {
    const APResult r = average_precision(dets, gts, t);
    sum += r.ap;
    if (t == 0.50) out.map50 = r.ap;
  }
  out.map5095 = sum / static_cast<double>(coco_thresholds().size());

  // small objects: ignore every ground truth with pixel area >= 32^2
  std::vector<std::vector<char>> ignore(gts.size());
  std::size_t n_small = 0;
  for (std::size_t img = 0; img < gts.size(); ++img) {
    ignore[img].assign(gts[img].size(), 0);
    for (std::size_t j = 0; j < gts[img].size(); ++j) {
      const double area_px =
          gts[img][j].w * image_size * gts[img][j].h * image_size;
      if (area_px >= 32.0 * 32.0)
        ignore[img][j] = 1;
      else
        ++n_small;
    }
  }
  if (n_small > 0) {
    double small_sum = 0;
    for (double t : coco_thresholds())
      small_sum += average_precision(dets, gts, t, &ignore).ap;
    out.ap_small = small_sum / static_cast<double>(coco_thresholds().size());
  }

  auto [p, r] = precision_recall_at(dets, gts, pr_score_thresh, 0.5);
  out.precision = p;
  out.recall = r;
  return out;
}

}  // namespace sardet
