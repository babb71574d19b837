#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "naive_eval.hpp"
#include "sardet/metrics.hpp"
#include "sardet/rng.hpp"

using namespace sardet;
using Catch::Approx;

namespace {

Detection det(int image, Box b, double score) { return Detection{image, b, score}; }

}  // namespace

TEST_CASE("iou closed forms") {
  Box a{0.5, 0.5, 0.2, 0.2};
  REQUIRE(iou(a, a) == Approx(1.0));

  Box b{0.9, 0.9, 0.1, 0.1};
  REQUIRE(iou(a, b) == 0.0);

  // top-left (0,0) and (1,1), both 2x2 (in arbitrary units): 1 / 7
  Box p = Box::from_corners(0, 0, 2, 2);
  Box q = Box::from_corners(1, 1, 3, 3);
  REQUIRE(iou(p, q) == Approx(1.0 / 7.0).margin(1e-12));
}

TEST_CASE("AP micro-cases pin the interpolation") {
  std::vector<GroundTruth> gts{{Box{0.5, 0.5, 0.2, 0.2}}, {Box{0.3, 0.3, 0.1, 0.1}}};

  // perfect predictions, one per ground truth
  std::vector<Detection> perfect{det(0, gts[0][0], 0.9), det(1, gts[1][0], 0.8)};
  auto r = average_precision(perfect, gts, 0.5);
  REQUIRE(r.defined);
  REQUIRE(r.ap == Approx(1.0).margin(1e-9));

  // higher-scored FP then TP on a single ground truth: AP = 0.5
  std::vector<GroundTruth> one{{Box{0.5, 0.5, 0.2, 0.2}}};
  std::vector<Detection> fp_tp{det(0, Box{0.9, 0.9, 0.05, 0.05}, 0.9),
                               det(0, one[0][0], 0.5)};
  auto r2 = average_precision(fp_tp, one, 0.5);
  REQUIRE(r2.ap == Approx(0.5).margin(1e-9));

  // no predictions at all
  auto r3 = average_precision({}, one, 0.5);
  REQUIRE(r3.defined);
  REQUIRE(r3.ap == 0.0);

  // no ground truths: undefined, reported as 0 with the flag cleared
  std::vector<GroundTruth> empty{{}};
  auto r4 = average_precision({det(0, one[0][0], 0.9)}, empty, 0.5);
  REQUIRE_FALSE(r4.defined);
  REQUIRE(r4.ap == 0.0);
}

TEST_CASE("duplicate detections on one ground truth: second is a false positive") {
  std::vector<GroundTruth> gts{{Box{0.5, 0.5, 0.2, 0.2}}};
  std::vector<Detection> dets{det(0, gts[0][0], 0.9),
                              det(0, Box{0.51, 0.5, 0.2, 0.2}, 0.8)};
  // the duplicate arrives after full recall, so AP stays 1...
  REQUIRE(average_precision(dets, gts, 0.5).ap == Approx(1.0).margin(1e-9));
  // ...but the fixed operating point counts it: precision 1/2, recall 1
  auto [p, r] = precision_recall_at(dets, gts, 0.5, 0.5);
  REQUIRE(p == Approx(0.5));
  REQUIRE(r == Approx(1.0));
}

TEST_CASE("map5095 equals the arithmetic mean of the ten per-threshold APs") {
  Rng rng(5);
  std::vector<GroundTruth> gts(10);
  std::vector<Detection> dets;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 3; ++j) {
      Box g{0.2 + 0.3 * j, 0.2 + 0.06 * i, 0.1, 0.12};
      gts[i].push_back(g);
      Box jit{g.cx + rng.uniform(-0.02, 0.02), g.cy + rng.uniform(-0.02, 0.02), g.w, g.h};
      dets.push_back(det(i, jit, rng.uniform(0.1, 0.99)));
    }
    dets.push_back(det(i, Box{0.8, 0.8, 0.07, 0.07}, rng.uniform(0.1, 0.99)));
  }
  auto res = coco_map(dets, gts, 64);
  double mean = 0;
  for (double t : coco_thresholds()) mean += average_precision(dets, gts, t).ap;
  mean /= 10.0;
  REQUIRE(res.map5095 == Approx(mean).margin(1e-9));
}

TEST_CASE("boxes jittered to IoU ~ 0.62: map50 = 1, map5095 = 0.3") {
  // same-size boxes shifted along x: IoU = (w - dx) / (w + dx); dx chosen so
  // IoU sits strictly between the 0.60 and 0.65 thresholds
  const double w = 16.0 / 64.0;
  const double target = 0.62;
  const double dx = w * (1 - target) / (1 + target);
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 5; ++i) {
    Box g{0.5, 0.5, w, w};
    gts.push_back({g});
    dets.push_back(det(i, Box{g.cx + dx, g.cy, w, w}, 0.9 - 0.01 * i));
  }
  const double got = iou(Box{0.5, 0.5, w, w}, Box{0.5 + dx, 0.5, w, w});
  REQUIRE(got == Approx(target).margin(1e-6));
  auto res = coco_map(dets, gts, 64);
  REQUIRE(res.map50 == Approx(1.0).margin(1e-9));
  REQUIRE(res.map5095 == Approx(0.3).margin(1e-9));  // thresholds .50/.55/.60 pass
}

TEST_CASE("AP is invariant under strictly monotone score rescaling") {
  Rng rng(7);
  std::vector<GroundTruth> gts(5);
  std::vector<Detection> dets;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 2; ++j) {
      Box g{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1};
      gts[i].push_back(g);
      dets.push_back(det(i, Box{g.cx + rng.uniform(-0.03, 0.03), g.cy, 0.1, 0.1},
                         rng.uniform(0.05, 0.95)));
    }
    dets.push_back(det(i, Box{0.1, 0.1, 0.05, 0.05}, rng.uniform(0.05, 0.95)));
  }
  auto base = average_precision(dets, gts, 0.5);
  std::vector<Detection> rescaled = dets;
  for (auto& d : rescaled) d.score = 3.0 * d.score * d.score + 1.0;  // monotone on (0,1)
  auto re = average_precision(rescaled, gts, 0.5);
  REQUIRE(re.ap == Approx(base.ap).margin(1e-12));
}

TEST_CASE("ap_small is an absent marker when no small ground truths exist") {
  // 40x40 px at 64: area 1600 >= 1024, not small
  std::vector<GroundTruth> gts{{Box{0.5, 0.5, 40.0 / 64, 40.0 / 64}}};
  std::vector<Detection> dets{det(0, gts[0][0], 0.9)};
  auto res = coco_map(dets, gts, 64);
  REQUIRE_FALSE(res.ap_small.has_value());
  REQUIRE(res.map50 == Approx(1.0).margin(1e-9));

  // an 8x8 px box is small at 64
  gts[0].push_back(Box{0.2, 0.2, 8.0 / 64, 8.0 / 64});
  dets.push_back(det(0, gts[0][1], 0.8));
  auto res2 = coco_map(dets, gts, 64);
  REQUIRE(res2.ap_small.has_value());
  REQUIRE(*res2.ap_small == Approx(1.0).margin(1e-9));
}

TEST_CASE("library evaluation matches the naive evaluator on 100 random scenes") {
  Rng rng(11);
  for (int scene = 0; scene < 100; ++scene) {
    const int n_images = 1 + rng.uniform_int(0, 2);
    std::vector<GroundTruth> gts(n_images);
    std::vector<Detection> dets;
    for (int img = 0; img < n_images; ++img) {
      const int n_gt = rng.uniform_int(0, 4);
      for (int j = 0; j < n_gt; ++j) {
        const double w = rng.uniform(0.05, 0.6);
        const double h = rng.uniform(0.05, 0.6);
        Box g{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
        gts[img].push_back(g);
        const int n_det = rng.uniform_int(0, 2);
        for (int d = 0; d < n_det; ++d)
          dets.push_back(det(img,
                             Box{g.cx + rng.uniform(-0.1, 0.1), g.cy + rng.uniform(-0.1, 0.1),
                                 g.w * rng.uniform(0.7, 1.3), g.h * rng.uniform(0.7, 1.3)},
                             rng.uniform(0.01, 0.99)));
      }
      const int spurious = rng.uniform_int(0, 3);
      for (int d = 0; d < spurious; ++d)
        dets.push_back(det(img,
                           Box{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                               rng.uniform(0.03, 0.3), rng.uniform(0.03, 0.3)},
                           rng.uniform(0.01, 0.99)));
    }
    auto lib = coco_map(dets, gts, 64);
    auto ref = naive::naive_coco_map(dets, gts, 64);
    INFO("scene " << scene);
    REQUIRE(lib.map50 == Approx(ref.map50).margin(1e-9));
    REQUIRE(lib.map5095 == Approx(ref.map5095).margin(1e-9));
    REQUIRE(lib.precision == Approx(ref.precision).margin(1e-9));
    REQUIRE(lib.recall == Approx(ref.recall).margin(1e-9));
    REQUIRE(lib.ap_small.has_value() == ref.ap_small.has_value());
    if (lib.ap_small)
      REQUIRE(*lib.ap_small == Approx(*ref.ap_small).margin(1e-9));
  }
}

TEST_CASE("perfect detector scores 1 everywhere") {
  std::vector<GroundTruth> gts(3);
  std::vector<Detection> dets;
  Rng rng(13);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      Box g{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), 0.15, 0.2};
      gts[i].push_back(g);
      dets.push_back(det(i, g, 0.95));
    }
  auto res = coco_map(dets, gts, 64);
  REQUIRE(res.map50 == Approx(1.0).margin(1e-9));
  REQUIRE(res.map5095 == Approx(1.0).margin(1e-9));
  REQUIRE(res.precision == Approx(1.0).margin(1e-9));
  REQUIRE(res.recall == Approx(1.0).margin(1e-9));
}
