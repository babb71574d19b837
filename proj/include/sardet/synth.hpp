#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <map>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sardet/boxes.hpp"
#include "sardet/tensor.hpp"

// Synthetic SAR benchmark: multiplicative L-look gamma speckle over a mean
// map with rectangular ship targets and an optional coastal clutter band,
// plus the on-disk formats (raw STN1 tensors, 8-bit PGM previews, JSONL
// annotations, and a COCO-subset reader).

namespace sardet {

struct SceneSpec {
  int size = 64;
  double mu_bg = 1.0;
  int looks = 1;  // L >= 1
  int ships_min = 1, ships_max = 3;
  int ship_px_min = 4, ship_px_max = 10;
  double contrast_min = 6.0, contrast_max = 12.0;
  bool coastal = false;
  double coastal_width_frac = 0.25;
  double coastal_multiplier = 3.0;
  std::uint64_t seed = 1;

  void validate() const {
    require(size >= 8, "scene: size must be >= 8, got ", size);
    require(mu_bg > 0, "scene: background mean must be positive");
    require(looks >= 1, "scene: looks must be >= 1, got ", looks);
    require(contrast_min > 1 && contrast_max >= contrast_min,
            "scene: contrast ratio must exceed 1");
    require(ship_px_min >= 2 && ship_px_max >= ship_px_min && ship_px_max < size,
            "scene: ship size range invalid");
    require(ships_min >= 0 && ships_max >= ships_min, "scene: ship count range invalid");
  }
};

// i.i.d. mu * Gamma(shape=looks, scale=1/looks); mean mu, variance mu^2 / L
template <class Real = float>
TensorT<Real> gen_speckle(Shape4 shape, double mu, int looks, Rng& rng) {
  require(looks >= 1, "gen_speckle: looks must be >= 1, got ", looks);
  require(mu > 0, "gen_speckle: mu must be positive, got ", mu);
  TensorT<Real> t(shape);
  for (auto& v : t.data) v = static_cast<Real>(mu * rng.gamma_looks(looks));
  return t;
}

struct PixelBox {
  int x = 0, y = 0, w = 0, h = 0;  // top-left corner, pixel units

  Box normalized(int size) const {
    return Box{(x + w / 2.0) / size, (y + h / 2.0) / size,
               static_cast<double>(w) / size, static_cast<double>(h) / size};
  }
};

inline double pixel_iou(const PixelBox& a, const PixelBox& b) {
  const int ix1 = std::max(a.x, b.x), iy1 = std::max(a.y, b.y);
  const int ix2 = std::min(a.x + a.w, b.x + b.w), iy2 = std::min(a.y + a.h, b.y + b.h);
  const int iw = ix2 - ix1, ih = iy2 - iy1;
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = static_cast<double>(iw) * ih;
  return inter / (static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter);
}

struct Scene {
  Tensor image;  // (1,1,size,size)
  GroundTruth boxes;
  std::vector<PixelBox> pixel_boxes;
  bool coastal = false;
};

inline Scene render_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int s = spec.size;

  Tensor mean({1, 1, s, s});
  std::fill(mean.data.begin(), mean.data.end(), static_cast<float>(spec.mu_bg));

  // ship rectangles: rejection sampling keeps pairwise IoU < 0.3
  const int count = rng.uniform_int(spec.ships_min, spec.ships_max);
  std::vector<PixelBox> ships;
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      PixelBox b;
      b.w = rng.uniform_int(spec.ship_px_min, spec.ship_px_max);
      b.h = rng.uniform_int(spec.ship_px_min, spec.ship_px_max);
      b.x = rng.uniform_int(0, s - b.w);
      b.y = rng.uniform_int(0, s - b.h);
      bool ok = true;
      for (const auto& other : ships)
        if (pixel_iou(b, other) >= 0.3) {
          ok = false;
          break;
        }
      if (ok) {
        ships.push_back(b);
        break;
      }
    }
  }
  for (const auto& b : ships) {
    const double contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
    for (int y = b.y; y < b.y + b.h; ++y)
      for (int x = b.x; x < b.x + b.w; ++x)
        mean.at(0, 0, y, x) = static_cast<float>(contrast * spec.mu_bg);
  }

  // coastal band along one edge multiplies its region's mean
  if (spec.coastal) {
    const int side = rng.uniform_int(0, 3);  // 0=left 1=right 2=top 3=bottom
    const int width = std::max(1, static_cast<int>(spec.coastal_width_frac * s));
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const bool in_band = (side == 0 && x < width) || (side == 1 && x >= s - width) ||
                             (side == 2 && y < width) || (side == 3 && y >= s - width);
        if (in_band)
          mean.at(0, 0, y, x) *= static_cast<float>(spec.coastal_multiplier);
      }
  }

  Scene out;
  out.coastal = spec.coastal;
  out.image = Tensor({1, 1, s, s});
  for (std::size_t i = 0; i < out.image.data.size(); ++i)
    out.image.data[i] =
        static_cast<float>(mean.data[i] * rng.gamma_looks(spec.looks));
  for (const auto& b : ships) {
    out.pixel_boxes.push_back(b);
    out.boxes.push_back(b.normalized(s));
  }
  return out;
}

// ---- raw tensor files ("STN1") -------------------------------------------

namespace detail {
inline void put_u32le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.good(), "file truncated while reading a 32-bit field");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f32le(std::ostream& os, float v) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 4);
  put_u32le(os, bits);
}
inline float get_f32le(std::istream& is) {
  const std::uint32_t bits = get_u32le(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace detail

// magic "STN1", u32 rank, rank x u32 dims, then little-endian f32 data
inline void write_stn1(const std::string& path, const Tensor& t,
                       std::vector<int> dims = {}) {
  if (dims.empty()) dims = {t.shape.c, t.shape.h, t.shape.w};
  std::int64_t n = 1;
  for (int d : dims) n *= d;
  require(n == t.numel(), "write_stn1: dims do not cover the tensor");
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_stn1: cannot open ", path);
  os.write("STN1", 4);
  detail::put_u32le(os, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) detail::put_u32le(os, static_cast<std::uint32_t>(d));
  for (float v : t.data) detail::put_f32le(os, v);
  require(os.good(), "write_stn1: write failed for ", path);
}

inline Tensor read_stn1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_stn1: cannot open ", path);
  char magic[4];
  is.read(magic, 4);
  require(is.good() && std::string(magic, 4) == "STN1",
          "read_stn1: bad magic in ", path);
  const std::uint32_t rank = detail::get_u32le(is);
  require(rank >= 1 && rank <= 4, "read_stn1: unsupported rank ", rank, " in ", path);
  std::vector<int> dims(rank);
  std::int64_t n = 1;
  for (auto& d : dims) {
    d = static_cast<int>(detail::get_u32le(is));
    n *= d;
  }
  require(n >= 0 && n < (std::int64_t{1} << 31), "read_stn1: absurd element count in ", path);
  Shape4 s{1, 1, 1, 1};
  if (rank == 1) s.w = dims[0];
  if (rank == 2) { s.h = dims[0]; s.w = dims[1]; }
  if (rank == 3) { s.c = dims[0]; s.h = dims[1]; s.w = dims[2]; }
  if (rank == 4) s = Shape4{dims[0], dims[1], dims[2], dims[3]};
  Tensor t(s);
  for (auto& v : t.data) v = detail::get_f32le(is);
  require(is.good(), "read_stn1: truncated data in ", path);
  return t;
}

// ---- 8-bit binary PGM (P5) ------------------------------------------------

// fixed normalization: clip at mean + 5 sigma, then min-max to [0,255]
inline void write_pgm(const std::string& path, const Tensor& img) {
  require(img.shape.n == 1 && img.shape.c == 1, "write_pgm: expected (1,1,H,W), got ",
          img.shape.str());
  double mean = 0;
  for (float v : img.data) mean += v;
  mean /= static_cast<double>(img.data.size());
  double var = 0;
  for (float v : img.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(img.data.size());
  const double cap = mean + 5.0 * std::sqrt(var);
  double lo = cap, hi = -1e300;
  std::vector<double> clipped(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    clipped[i] = std::min(static_cast<double>(img.data[i]), cap);
    lo = std::min(lo, clipped[i]);
    hi = std::max(hi, clipped[i]);
  }
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_pgm: cannot open ", path);
  os << "P5\n" << img.shape.w << " " << img.shape.h << "\n255\n";
  const double span = hi - lo;
  for (double v : clipped) {
    const int q = span > 0 ? static_cast<int>(std::lround((v - lo) / span * 255.0)) : 0;
    os.put(static_cast<char>(std::clamp(q, 0, 255)));
  }
  require(os.good(), "write_pgm: write failed for ", path);
}

inline Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_pgm: cannot open ", path);
  std::string magic;
  is >> magic;
  require(magic == "P5", "read_pgm: unsupported magic '", magic, "' in ", path);
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  require(w > 0 && h > 0 && maxval == 255, "read_pgm: bad header in ", path);
  is.get();  // single whitespace after maxval
  Tensor t({1, 1, h, w});
  for (auto& v : t.data) {
    const int c = is.get();
    require(c != EOF, "read_pgm: truncated data in ", path);
    v = static_cast<float>(c) / 255.0f;
  }
  return t;
}

// ---- datasets ---------------------------------------------------------------

struct Sample {
  Tensor image;  // (1,1,H,W)
  GroundTruth boxes;
  std::string path;
  bool coastal = false;  // generator-side tag, not persisted
};

using Dataset = std::vector<Sample>;

struct DatasetGenConfig {
  SceneSpec scene;           // per-scene template; seed field is ignored
  int n_train = 500;
  int n_val = 100;
  std::uint64_t seed = 1;
  double coastal_prob = 0.5;
  bool write_pgm_previews = false;
};

inline void append_annotation(std::ostream& os, const std::string& rel_path, int size,
                              const std::vector<PixelBox>& boxes) {
  nlohmann::json j;
  j["image"] = rel_path;
  j["width"] = size;
  j["height"] = size;
  auto arr = nlohmann::json::array();
  for (const auto& b : boxes) arr.push_back({b.x, b.y, b.w, b.h});
  j["boxes"] = arr;
  os << j.dump() << "\n";
}

inline void gen_split(const std::filesystem::path& dir, const DatasetGenConfig& cfg,
                      int count, std::uint64_t stream_offset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::ofstream ann(dir / "annotations.jsonl");
  require(ann.good(), "gen_dataset: cannot write annotations under ", dir.string());
  for (int i = 0; i < count; ++i) {
    Rng meta = Rng::for_index(cfg.seed, stream_offset + static_cast<std::uint64_t>(i));
    SceneSpec spec = cfg.scene;
    spec.coastal = meta.uniform() < cfg.coastal_prob;
    spec.seed = meta.next_u64();
    Scene scene = render_scene(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05d.stn1", i);
    write_stn1((dir / name).string(), scene.image);
    if (cfg.write_pgm_previews) {
      std::snprintf(name, sizeof(name), "images/%05d.pgm", i);
      write_pgm((dir / name).string(), scene.image);
      std::snprintf(name, sizeof(name), "images/%05d.stn1", i);
    }
    append_annotation(ann, name, spec.size, scene.pixel_boxes);
  }
}

// writes <out_dir>/train and <out_dir>/val; deterministic for a fixed seed
inline void gen_dataset(const DatasetGenConfig& cfg, const std::string& out_dir) {
  cfg.scene.validate();
  gen_split(std::filesystem::path(out_dir) / "train", cfg, cfg.n_train, 0);
  gen_split(std::filesystem::path(out_dir) / "val", cfg, cfg.n_val, 0x100000ULL);
}

// loads one split directory (holding annotations.jsonl); validates that every
// annotation references an existing image and that boxes sit inside it
inline Dataset load_dataset(const std::string& split_dir) {
  namespace fs = std::filesystem;
  const fs::path dir(split_dir);
  const fs::path ann_path = dir / "annotations.jsonl";
  std::ifstream ann(ann_path);
  require(ann.good(), "load_dataset: missing ", ann_path.string());
  Dataset out;
  std::string line;
  int line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail("load_dataset: ", ann_path.string(), ":", line_no, ": invalid record: ",
           e.what());
    }
    Sample s;
    const std::string rel = j.at("image").get<std::string>();
    const fs::path img_path = dir / rel;
    require(fs::exists(img_path), "load_dataset: ", ann_path.string(), ":", line_no,
            ": annotation references missing image ", img_path.string());
    s.path = img_path.string();
    if (img_path.extension() == ".pgm")
      s.image = read_pgm(s.path);
    else
      s.image = read_stn1(s.path);
    if (s.image.shape.n != 1 || s.image.shape.c != 1)
      fail("load_dataset: image ", s.path, " is not single-channel");
    const int W = j.at("width").get<int>();
    const int H = j.at("height").get<int>();
    require(W == s.image.shape.w && H == s.image.shape.h, "load_dataset: ",
            ann_path.string(), ":", line_no, ": recorded size ", W, "x", H,
            " does not match image ", s.image.shape.str());
    for (const auto& b : j.at("boxes")) {
      PixelBox pb{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                  b.at(3).get<int>()};
      require(pb.w > 0 && pb.h > 0, "load_dataset: ", ann_path.string(), ":", line_no,
              ": box has non-positive size");
      require(pb.x >= 0 && pb.y >= 0 && pb.x + pb.w <= W && pb.y + pb.h <= H,
              "load_dataset: ", ann_path.string(), ":", line_no,
              ": box extends outside the image");
      s.boxes.push_back(pb.normalized(W));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// COCO-subset reader: images[] with file_name/width/height, annotations[]
// with image_id and pixel-xywh bbox. Images themselves are not loaded.
struct CocoEntry {
  std::string file_name;
  int width = 0, height = 0;
  GroundTruth boxes;
};

inline std::vector<CocoEntry> read_coco_subset(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "read_coco_subset: cannot open ", path);
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const std::exception& e) {
    fail("read_coco_subset: ", path, ": invalid document: ", e.what());
  }
  std::map<std::int64_t, std::size_t> by_id;
  std::vector<CocoEntry> out;
  for (const auto& img : doc.at("images")) {
    CocoEntry e;
    e.file_name = img.at("file_name").get<std::string>();
    e.width = img.at("width").get<int>();
    e.height = img.at("height").get<int>();
    require(e.width > 0 && e.height > 0, "read_coco_subset: image ", e.file_name,
            " has invalid size");
    by_id[img.at("id").get<std::int64_t>()] = out.size();
    out.push_back(std::move(e));
  }
  for (const auto& ann : doc.at("annotations")) {
    const std::int64_t id = ann.at("image_id").get<std::int64_t>();
    auto it = by_id.find(id);
    require(it != by_id.end(), "read_coco_subset: annotation references unknown image id ",
            id);
    CocoEntry& e = out[it->second];
    const auto& bb = ann.at("bbox");
    const double x = bb.at(0).get<double>(), y = bb.at(1).get<double>();
    const double w = bb.at(2).get<double>(), h = bb.at(3).get<double>();
    require(w > 0 && h > 0, "read_coco_subset: bbox with non-positive size for image id ",
            id);
    e.boxes.push_back(Box{(x + w / 2) / e.width, (y + h / 2) / e.height, w / e.width,
                          h / e.height});
  }
  return out;
}

}  // namespace sardet
