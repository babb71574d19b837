#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <random>

#include "sardet/synth.hpp"

using namespace sardet;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("sardet_test_" + std::to_string(Rng(std::random_device{}()).next_u64() % 1000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("speckle statistics: mean, normalized variance, and the large-L limit") {
  const std::int64_t n = 1'000'000;
  for (int looks : {1, 4}) {
    Rng rng(1234 + looks);
    Tensor s = gen_speckle({1, 1, 1000, 1000}, 2.0, looks, rng);
    double mean = 0;
    for (float v : s.data) mean += v;
    mean /= static_cast<double>(n);
    REQUIRE(std::abs(mean - 2.0) / 2.0 < 0.02);

    double var = 0;
    for (float v : s.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double norm_var = var / (2.0 * 2.0);  // variance / mu^2 ~ 1/L
    REQUIRE(std::abs(norm_var - 1.0 / looks) * looks < 0.05);
  }

  // L = 256 approximates the no-speckle limit: coefficient of variation < 0.07
  Rng rng(77);
  Tensor s = gen_speckle({1, 1, 256, 256}, 1.0, 256, rng);
  double mean = 0;
  for (float v : s.data) mean += v;
  mean /= static_cast<double>(s.numel());
  double var = 0;
  for (float v : s.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(s.numel());
  REQUIRE(std::sqrt(var) / mean < 0.07);

  REQUIRE_THROWS_AS(gen_speckle({1, 1, 4, 4}, 1.0, 0, rng), Error);
  REQUIRE_THROWS_AS(gen_speckle({1, 1, 4, 4}, 0.0, 1, rng), Error);
}

TEST_CASE("scene with no ships and no coast is a pure speckle field") {
  SceneSpec spec;
  spec.ships_min = spec.ships_max = 0;
  spec.coastal = false;
  spec.seed = 42;
  Scene scene = render_scene(spec);
  REQUIRE(scene.boxes.empty());
  double mean = 0;
  for (float v : scene.image.data) mean += v;
  mean /= static_cast<double>(scene.image.numel());
  REQUIRE(mean == Approx(spec.mu_bg).margin(0.15));  // 4096 exponential samples
}

TEST_CASE("ship interiors carry the configured contrast") {
  SceneSpec spec;
  spec.contrast_min = spec.contrast_max = 8.0;
  spec.ship_px_min = 12;
  spec.ship_px_max = 16;
  spec.ships_min = spec.ships_max = 1;
  spec.looks = 1;

  double inside_sum = 0, n_inside = 0;
  std::vector<double> deviations;
  for (int i = 0; i < 20; ++i) {
    spec.seed = 100 + i;
    Scene scene = render_scene(spec);
    REQUIRE(scene.pixel_boxes.size() == 1);
    const PixelBox& b = scene.pixel_boxes[0];
    double box_sum = 0;
    for (int y = b.y; y < b.y + b.h; ++y)
      for (int x = b.x; x < b.x + b.w; ++x) box_sum += scene.image.at(0, 0, y, x);
    const double box_mean = box_sum / (b.w * b.h);
    deviations.push_back(std::abs(box_mean - 8.0) / 8.0);
    inside_sum += box_sum;
    n_inside += b.w * b.h;
  }
  // per-box sample means sit within 10% of 8x background for the typical box
  // (a lone box of ~200 exponential pixels has ~7% sampling noise)
  std::sort(deviations.begin(), deviations.end());
  REQUIRE(deviations[deviations.size() / 2] < 0.10);
  REQUIRE(std::abs(inside_sum / n_inside - 8.0) / 8.0 < 0.03);
}

TEST_CASE("emitted boxes are inside the image, non-degenerate, weakly overlapping") {
  SceneSpec spec;
  spec.ships_min = 2;
  spec.ships_max = 3;
  for (int i = 0; i < 50; ++i) {
    spec.seed = 500 + i;
    spec.coastal = (i % 2 == 0);
    Scene scene = render_scene(spec);
    for (const auto& b : scene.pixel_boxes) {
      REQUIRE(b.w * b.h >= 4);
      REQUIRE(b.x >= 0);
      REQUIRE(b.y >= 0);
      REQUIRE(b.x + b.w <= spec.size);
      REQUIRE(b.y + b.h <= spec.size);
    }
    for (std::size_t a = 0; a < scene.pixel_boxes.size(); ++a)
      for (std::size_t c = a + 1; c < scene.pixel_boxes.size(); ++c)
        REQUIRE(pixel_iou(scene.pixel_boxes[a], scene.pixel_boxes[c]) < 0.3);
    validate_ground_truth(scene.boxes, "synth");
  }
}

TEST_CASE("default size range keeps every target below the small-object cut") {
  SceneSpec spec;  // 4..10 px at 64
  int boxes = 0;
  for (int i = 0; i < 30; ++i) {
    spec.seed = 900 + i;
    Scene scene = render_scene(spec);
    for (const auto& b : scene.pixel_boxes) {
      REQUIRE(b.w * b.h < 32 * 32);
      ++boxes;
    }
  }
  REQUIRE(boxes > 0);
}

TEST_CASE("stn1 files round-trip bitwise") {
  TempDir tmp;
  Rng rng(7);
  Tensor t = Tensor::uniform({1, 3, 5, 7}, rng, -10.0f, 10.0f);
  t.data[0] = 0.1f;  // not representable exactly: bitwise equality is the test
  const auto p = (tmp.path / "t.stn1").string();
  write_stn1(p, t, {3, 5, 7});
  Tensor back = read_stn1(p);
  REQUIRE(back.shape == Shape4{1, 3, 5, 7});
  REQUIRE(std::memcmp(back.data.data(), t.data.data(), t.data.size() * 4) == 0);

  std::ofstream bad((tmp.path / "bad.stn1").string(), std::ios::binary);
  bad << "NOPE";
  bad.close();
  REQUIRE_THROWS_WITH(read_stn1((tmp.path / "bad.stn1").string()),
                      Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("pgm preview: header, dynamic range, degenerate case") {
  TempDir tmp;
  SceneSpec spec;
  spec.seed = 3;
  Scene scene = render_scene(spec);
  const auto p = (tmp.path / "img.pgm").string();
  write_pgm(p, scene.image);
  Tensor back = read_pgm(p);
  REQUIRE(back.shape == scene.image.shape);
  float lo = 1e9f, hi = -1e9f;
  for (float v : back.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  REQUIRE(lo == 0.0f);
  REQUIRE(hi == 1.0f);

  Tensor zeros({1, 1, 4, 4});
  write_pgm((tmp.path / "z.pgm").string(), zeros);
  Tensor zback = read_pgm((tmp.path / "z.pgm").string());
  for (float v : zback.data) REQUIRE(v == 0.0f);
}

TEST_CASE("dataset generation round-trips and is bitwise reproducible") {
  TempDir a, b;
  DatasetGenConfig cfg;
  cfg.n_train = 6;
  cfg.n_val = 3;
  cfg.seed = 11;
  cfg.write_pgm_previews = true;
  gen_dataset(cfg, a.path.string());
  gen_dataset(cfg, b.path.string());

  Dataset train = load_dataset((a.path / "train").string());
  Dataset val = load_dataset((a.path / "val").string());
  REQUIRE(train.size() == 6);
  REQUIRE(val.size() == 3);
  for (const auto& s : train) {
    REQUIRE(s.image.shape == Shape4{1, 1, 64, 64});
    validate_ground_truth(s.boxes, "loaded");
  }

  // identical seeds give bitwise-identical raw tensors
  for (int i = 0; i < 6; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05d.stn1", i);
    REQUIRE(slurp(a.path / "train" / name) == slurp(b.path / "train" / name));
  }

  // boxes survive the write -> load round trip exactly
  Rng meta = Rng::for_index(cfg.seed, 0);
  SceneSpec spec0 = cfg.scene;
  spec0.coastal = meta.uniform() < cfg.coastal_prob;
  spec0.seed = meta.next_u64();
  Scene scene0 = render_scene(spec0);
  REQUIRE(scene0.boxes.size() == train[0].boxes.size());
  for (std::size_t j = 0; j < scene0.boxes.size(); ++j) {
    REQUIRE(train[0].boxes[j].cx == scene0.boxes[j].cx);
    REQUIRE(train[0].boxes[j].w == scene0.boxes[j].w);
  }
}

TEST_CASE("loader reports the first violated invariant") {
  TempDir tmp;
  fs::create_directories(tmp.path / "images");
  {
    std::ofstream ann(tmp.path / "annotations.jsonl");
    ann << R"({"image":"images/missing.stn1","width":64,"height":64,"boxes":[]})" << "\n";
  }
  REQUIRE_THROWS_WITH(load_dataset(tmp.path.string()),
                      Catch::Matchers::ContainsSubstring("missing image"));

  // out-of-bounds box
  {
    Tensor img({1, 1, 8, 8});
    write_stn1((tmp.path / "images/0.stn1").string(), img);
    std::ofstream ann(tmp.path / "annotations.jsonl");
    ann << R"({"image":"images/0.stn1","width":8,"height":8,"boxes":[[6,6,4,4]]})" << "\n";
  }
  REQUIRE_THROWS_WITH(load_dataset(tmp.path.string()),
                      Catch::Matchers::ContainsSubstring("outside"));
}

TEST_CASE("coco-subset reader on a hand-written two-image document") {
  TempDir tmp;
  const char* doc = R"({
    "images": [
      {"id": 1, "file_name": "a.png", "width": 100, "height": 50},
      {"id": 2, "file_name": "b.png", "width": 64, "height": 64}
    ],
    "annotations": [
      {"image_id": 1, "bbox": [10, 20, 30, 10]},
      {"image_id": 1, "bbox": [50, 5, 20, 20]},
      {"image_id": 2, "bbox": [0, 0, 64, 64]}
    ]
  })";
  const auto p = (tmp.path / "coco.json").string();
  {
    std::ofstream os(p);
    os << doc;
  }
  auto entries = read_coco_subset(p);
  REQUIRE(entries.size() == 2);
  REQUIRE(entries[0].file_name == "a.png");
  REQUIRE(entries[0].boxes.size() == 2);
  // bbox [10,20,30,10] on 100x50: center (25, 25) -> (0.25, 0.5), size (0.3, 0.2)
  REQUIRE(entries[0].boxes[0].cx == Approx(0.25));
  REQUIRE(entries[0].boxes[0].cy == Approx(0.5));
  REQUIRE(entries[0].boxes[0].w == Approx(0.3));
  REQUIRE(entries[0].boxes[0].h == Approx(0.2));
  REQUIRE(entries[1].boxes.size() == 1);
  REQUIRE(entries[1].boxes[0].w == Approx(1.0));
}
