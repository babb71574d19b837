#pragma once

#include <algorithm>
#include <vector>

#include "sardet/error.hpp"

namespace sardet {

// Axis-aligned box in normalized center format: (cx, cy, w, h) in [0,1].
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - w / 2; }
  double y1() const { return cy - h / 2; }
  double x2() const { return cx + w / 2; }
  double y2() const { return cy + h / 2; }
  double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return Box{(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
  }

  // clip to the unit square (used for emitted detections, not for the loss)
  Box clipped() const {
    const double cx1 = std::clamp(x1(), 0.0, 1.0), cy1 = std::clamp(y1(), 0.0, 1.0);
    const double cx2 = std::clamp(x2(), 0.0, 1.0), cy2 = std::clamp(y2(), 0.0, 1.0);
    return from_corners(cx1, cy1, cx2, cy2);
  }
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// per-image ground truth, boxes normalized; w,h > 0 and inside [0,1]
using GroundTruth = std::vector<Box>;

inline void validate_ground_truth(const GroundTruth& gt, const char* where) {
  for (const Box& b : gt) {
    require(b.w > 0 && b.h > 0, where, ": ground-truth box has non-positive size");
    require(b.x1() >= -1e-9 && b.y1() >= -1e-9 && b.x2() <= 1 + 1e-9 && b.y2() <= 1 + 1e-9,
            where, ": ground-truth box extends outside the unit square");
  }
}

}  // namespace sardet
