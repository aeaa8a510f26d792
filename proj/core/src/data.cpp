#include "heightformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "heightformer/errors.hpp"
#include "heightformer/image_io.hpp"

namespace fs = std::filesystem;

namespace heightformer {

void ScenePair::validate() const {
  if (image.ndim() != 3 || image.dim(2) != 3) throw DataError("scene: image must be [H,W,3]");
  if (dsm.ndim() != 2 || mask.ndim() != 2) throw DataError("scene: dsm/mask must be [H,W]");
  if (image.dim(0) != dsm.dim(0) || image.dim(1) != dsm.dim(1) || !dsm.same_shape(mask))
    throw DataError("scene: image/dsm/mask dimensions differ");
  if (h_max <= h_min) throw DataError("scene: degenerate height range");
  for (int64_t i = 0; i < dsm.numel(); ++i) {
    if (mask[i] > 0.5) {
      if (!std::isfinite(dsm[i])) throw DataError("scene: non-finite height marked valid");
      if (dsm[i] < h_min - 1e-9 || dsm[i] > h_max + 1e-9)
        throw DataError("scene: valid height outside declared range");
    }
  }
}

void AugmentConfig::validate(int64_t tile_size) const {
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(rotate_prob) || !prob_ok(photo_prob))
    throw UsageError("augment: probabilities must be in [0,1]");
  if (gamma_lo > gamma_hi || brightness_lo > brightness_hi || color_lo > color_hi)
    throw UsageError("augment: range pairs must satisfy lo <= hi");
  if (crop_size < 1) throw UsageError("augment: crop_size must be positive");
  if (crop_size > tile_size)
    throw DataError("augment: crop_size " + std::to_string(crop_size) + " exceeds tile size " +
                    std::to_string(tile_size));
}

void SynthSpec::validate() const {
  if (size < 16) throw UsageError("synth: scene size too small");
  if (buildings < 0 || trees < 0) throw UsageError("synth: counts must be >= 0");
  if (building_height_lo < 0 || tree_height_lo < 0 || building_height_lo > building_height_hi ||
      tree_height_lo > tree_height_hi)
    throw UsageError("synth: height ranges must be non-negative with lo <= hi");
  if (buildings > 0 && (building_foot_lo < 1 || building_foot_lo > building_foot_hi || building_foot_hi > size))
    throw UsageError("synth: building footprint range invalid");
  if (road_fraction < 0.0 || road_fraction > 0.5) throw UsageError("synth: road_fraction must be in [0, 0.5]");
  if (h_max <= h_min) throw UsageError("synth: degenerate height range");
  const double tallest = std::max(buildings > 0 ? building_height_hi : 0.0, trees > 0 ? tree_height_hi : 0.0);
  if (ground_height < h_min || ground_height + tallest > h_max)
    throw UsageError("synth: contents exceed the declared height range");
}

Tensor normalize_heights(const Tensor& dsm, double h_min, double h_max) {
  if (h_max <= h_min) throw DataError("normalize_heights: degenerate height range");
  Tensor out(dsm.shape());
  const double inv = 1.0 / (h_max - h_min);
  for (int64_t i = 0; i < dsm.numel(); ++i) out[i] = (dsm[i] - h_min) * inv;
  return out;
}

Tensor rescale_heights(const Tensor& unit, double h_min, double h_max) {
  if (h_max <= h_min) throw DataError("rescale_heights: degenerate height range");
  Tensor out(unit.shape());
  for (int64_t i = 0; i < unit.numel(); ++i) out[i] = h_min + (h_max - h_min) * unit[i];
  return out;
}

std::vector<int64_t> grid_origins(int64_t extent, int64_t tile, int64_t stride) {
  if (extent < tile) throw DataError("grid: extent " + std::to_string(extent) + " smaller than tile " +
                                     std::to_string(tile));
  std::vector<int64_t> origins;
  if (extent == tile) {
    origins.push_back(0);
    return origins;
  }
  const int64_t n = (extent - tile + stride - 1) / stride + 1;
  for (int64_t k = 0; k + 1 < n; ++k) origins.push_back(k * stride);
  origins.push_back(extent - tile);
  return origins;
}

TilePair crop_window(const ScenePair& scene, int64_t row0, int64_t col0, int64_t size) {
  TilePair t;
  t.row0 = row0;
  t.col0 = col0;
  t.h_min = scene.h_min;
  t.h_max = scene.h_max;
  t.resolution = scene.resolution;
  t.image = Tensor({size, size, 3});
  t.dsm = Tensor({size, size});
  t.mask = Tensor({size, size});
  for (int64_t i = 0; i < size; ++i) {
    const int64_t src_row = row0 + i;
    std::memcpy(t.image.data() + i * size * 3, scene.image.data() + (src_row * scene.cols() + col0) * 3,
                static_cast<size_t>(size) * 3 * sizeof(double));
    std::memcpy(t.dsm.data() + i * size, scene.dsm.data() + src_row * scene.cols() + col0,
                static_cast<size_t>(size) * sizeof(double));
    std::memcpy(t.mask.data() + i * size, scene.mask.data() + src_row * scene.cols() + col0,
                static_cast<size_t>(size) * sizeof(double));
  }
  return t;
}

std::vector<TilePair> crop_grid(const ScenePair& scene, int64_t tile) {
  const std::vector<int64_t> rows = grid_origins(scene.rows(), tile, tile);
  const std::vector<int64_t> cols = grid_origins(scene.cols(), tile, tile);
  std::vector<TilePair> tiles;
  tiles.reserve(rows.size() * cols.size());
  for (int64_t r : rows)
    for (int64_t c : cols) tiles.push_back(crop_window(scene, r, c, tile));
  return tiles;
}

TilePair rotate_pair(const TilePair& in, double degrees) {
  const int64_t h = in.rows(), w = in.cols();
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(-rad), sn = std::sin(-rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

  TilePair out;
  static_cast<ScenePair&>(out) = in;
  out.row0 = in.row0;
  out.col0 = in.col0;
  out.image = Tensor({h, w, 3});
  out.dsm = Tensor({h, w});
  out.mask = Tensor({h, w});

  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double sy = cs * dy - sn * dx + cy;
      const double sx = sn * dy + cs * dx + cx;
      if (sy < 0.0 || sy > h - 1 || sx < 0.0 || sx > w - 1) continue;  // outside: mask stays 0
      const int64_t y0 = static_cast<int64_t>(sy), x0 = static_cast<int64_t>(sx);
      const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = sy - y0, fx = sx - x0;
      const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
      for (int c = 0; c < 3; ++c)
        out.image.at(y, x, c) = w00 * in.image.at(y0, x0, c) + w01 * in.image.at(y0, x1, c) +
                                w10 * in.image.at(y1, x0, c) + w11 * in.image.at(y1, x1, c);
      const bool all_valid = in.mask.at(y0, x0) > 0.5 && in.mask.at(y0, x1) > 0.5 &&
                             in.mask.at(y1, x0) > 0.5 && in.mask.at(y1, x1) > 0.5;
      if (all_valid) {
        out.dsm.at(y, x) = w00 * in.dsm.at(y0, x0) + w01 * in.dsm.at(y0, x1) + w10 * in.dsm.at(y1, x0) +
                           w11 * in.dsm.at(y1, x1);
        out.mask.at(y, x) = 1.0;
      }
    }
  }
  return out;
}

TilePair augment(const TilePair& in, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate(std::min(in.rows(), in.cols()));
  TilePair cur = in;

  // fixed draw order keeps (seed -> augmentation) reproducible
  if (rng.bernoulli(cfg.rotate_prob)) {
    const double angle = rng.uniform(-cfg.rotate_degrees, cfg.rotate_degrees);
    cur = rotate_pair(cur, angle);
  }
  const int64_t max_r = cur.rows() - cfg.crop_size;
  const int64_t max_c = cur.cols() - cfg.crop_size;
  const int64_t r0 = max_r > 0 ? rng.uniform_int(max_r + 1) : 0;
  const int64_t c0 = max_c > 0 ? rng.uniform_int(max_c + 1) : 0;
  TilePair out = crop_window(cur, r0, c0, cfg.crop_size);
  out.row0 = in.row0 + r0;
  out.col0 = in.col0 + c0;

  if (rng.bernoulli(cfg.photo_prob)) {
    const double gamma = rng.uniform(cfg.gamma_lo, cfg.gamma_hi);
    const double brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
    const double color[3] = {rng.uniform(cfg.color_lo, cfg.color_hi),
                             rng.uniform(cfg.color_lo, cfg.color_hi),
                             rng.uniform(cfg.color_lo, cfg.color_hi)};
    for (int64_t i = 0; i < out.image.numel(); i += 3)
      for (int c = 0; c < 3; ++c) {
        const double v = std::pow(std::max(out.image[i + c], 0.0), gamma) * brightness * color[c];
        out.image[i + c] = std::clamp(v, 0.0, 1.0);
      }
  }
  return out;
}

ScenePair synth_scene(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const int64_t n = spec.size;
  ScenePair scene;
  scene.h_min = spec.h_min;
  scene.h_max = spec.h_max;
  scene.resolution = 0.2;
  scene.dsm = Tensor::full({n, n}, spec.ground_height);
  scene.mask = Tensor::full({n, n}, 1.0);
  scene.image = Tensor({n, n, 3});

  // 0 ground, 1 road, 2 building, 3 tree
  std::vector<uint8_t> cls(static_cast<size_t>(n * n), 0);
  std::vector<double> feature_level(static_cast<size_t>(n * n), 0.0);  // per-class height cue

  if (spec.road_fraction > 0.0) {
    const int64_t width = std::max<int64_t>(2, static_cast<int64_t>(spec.road_fraction * n / 2));
    const int64_t hy = rng.uniform_int(n - width);
    const int64_t vx = rng.uniform_int(n - width);
    for (int64_t y = hy; y < hy + width; ++y)
      for (int64_t x = 0; x < n; ++x) cls[static_cast<size_t>(y * n + x)] = 1;
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = vx; x < vx + width; ++x) cls[static_cast<size_t>(y * n + x)] = 1;
  }

  const double shared_building_height =
      spec.ground_height + rng.uniform(spec.building_height_lo, spec.building_height_hi);
  for (int b = 0; b < spec.buildings; ++b) {
    const int64_t fh = spec.building_foot_lo + rng.uniform_int(spec.building_foot_hi - spec.building_foot_lo + 1);
    const int64_t fw = spec.building_foot_lo + rng.uniform_int(spec.building_foot_hi - spec.building_foot_lo + 1);
    const int64_t r0 = rng.uniform_int(n - fh + 1);
    const int64_t c0 = rng.uniform_int(n - fw + 1);
    const double top = spec.per_scene_building_height
                           ? shared_building_height
                           : spec.ground_height + rng.uniform(spec.building_height_lo, spec.building_height_hi);
    const double level = (top - spec.ground_height - spec.building_height_lo) /
                         std::max(1e-9, spec.building_height_hi - spec.building_height_lo);
    for (int64_t y = r0; y < r0 + fh; ++y)
      for (int64_t x = c0; x < c0 + fw; ++x) {
        const size_t i = static_cast<size_t>(y * n + x);
        double frac = 1.0;
        if (spec.edge_bevel_px > 0.0) {
          const double d = std::min(std::min<double>(y - r0 + 1, r0 + fh - y),
                                    std::min<double>(x - c0 + 1, c0 + fw - x));
          frac = std::min(1.0, d / spec.edge_bevel_px);
        }
        const double lifted = spec.ground_height + (top - spec.ground_height) * frac;
        if (lifted >= scene.dsm[y * n + x]) {
          scene.dsm[y * n + x] = lifted;
          cls[i] = 2;
          feature_level[i] = level;
        }
      }
  }

  for (int tr = 0; tr < spec.trees; ++tr) {
    const int64_t cy = rng.uniform_int(n);
    const int64_t cx = rng.uniform_int(n);
    const int64_t radius = 3 + rng.uniform_int(10);
    const double th = rng.uniform(spec.tree_height_lo, spec.tree_height_hi);
    const double level = (th - spec.tree_height_lo) / std::max(1e-9, spec.tree_height_hi - spec.tree_height_lo);
    for (int64_t y = std::max<int64_t>(0, cy - radius); y <= std::min(n - 1, cy + radius); ++y)
      for (int64_t x = std::max<int64_t>(0, cx - radius); x <= std::min(n - 1, cx + radius); ++x) {
        const double r = std::sqrt(double((y - cy) * (y - cy) + (x - cx) * (x - cx)));
        if (r > radius) continue;
        const double prof = std::cos(M_PI * r / (2.0 * radius));
        const double canopy = spec.ground_height + th * prof * prof;
        const int64_t i = y * n + x;
        if (canopy > scene.dsm[i]) {
          scene.dsm[i] = canopy;
          cls[static_cast<size_t>(i)] = 3;
          feature_level[static_cast<size_t>(i)] = level;
        }
      }
  }

  // render: distinguishable class textures, intensity tied to height
  const double inv_range = 1.0 / (spec.h_max - spec.h_min);
  for (int64_t i = 0; i < n * n; ++i) {
    double r, g, b;
    const double lvl = feature_level[static_cast<size_t>(i)];
    switch (cls[static_cast<size_t>(i)]) {
      case 1: r = 0.24; g = 0.24; b = 0.27; break;                                  // road
      case 2: r = 0.45 + 0.4 * lvl; g = 0.30 + 0.35 * lvl; b = 0.28 + 0.2 * lvl; break;  // roof
      case 3: r = 0.10; g = 0.30 + 0.45 * lvl; b = 0.12; break;                     // canopy
      default: r = 0.32; g = 0.40; b = 0.24; break;                                 // ground
    }
    const double shade = 0.6 + 0.4 * (scene.dsm[i] - spec.h_min) * inv_range;
    const double noise = rng.uniform(-spec.pixel_noise, spec.pixel_noise);
    scene.image[i * 3 + 0] = std::clamp(r * shade + noise, 0.0, 1.0);
    scene.image[i * 3 + 1] = std::clamp(g * shade + noise, 0.0, 1.0);
    scene.image[i * 3 + 2] = std::clamp(b * shade + noise, 0.0, 1.0);
  }
  return scene;
}

TilePair load_tile_pair(const std::string& image_path, const std::string& dsm_path, double sentinel) {
  TilePair t;
  t.image = read_png(image_path);
  RasterHeader hdr;
  t.dsm = read_f32_raster(dsm_path, &hdr);
  if (t.image.dim(0) != t.dsm.dim(0) || t.image.dim(1) != t.dsm.dim(1))
    throw DataError("co-registration violated: image " + std::to_string(t.image.dim(0)) + "x" +
                    std::to_string(t.image.dim(1)) + " vs dsm " + std::to_string(t.dsm.dim(0)) + "x" +
                    std::to_string(t.dsm.dim(1)) + " (" + image_path + ")");
  t.h_min = hdr.h_min;
  t.h_max = hdr.h_max;
  t.resolution = hdr.resolution;
  t.mask = Tensor(t.dsm.shape());
  int64_t valid = 0;
  for (int64_t i = 0; i < t.dsm.numel(); ++i) {
    const bool ok = std::isfinite(t.dsm[i]) && t.dsm[i] != sentinel;
    t.mask[i] = ok ? 1.0 : 0.0;
    if (ok) ++valid;
    else t.dsm[i] = 0.0;
  }
  if (valid == 0) throw DataError("all-invalid height raster: " + dsm_path);
  return t;
}

void save_scene(const std::string& root, const std::string& stem, const ScenePair& scene, double sentinel) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "dsm");
  write_png((fs::path(root) / "images" / (stem + ".png")).string(), scene.image);
  Tensor dsm = scene.dsm.clone();
  for (int64_t i = 0; i < dsm.numel(); ++i)
    if (scene.mask[i] <= 0.5) dsm[i] = sentinel;
  RasterHeader hdr;
  hdr.rows = scene.rows();
  hdr.cols = scene.cols();
  hdr.resolution = scene.resolution;
  hdr.h_min = scene.h_min;
  hdr.h_max = scene.h_max;
  write_f32_raster((fs::path(root) / "dsm" / (stem + ".f32")).string(), dsm, hdr);
}

Dataset scan_dataset(const std::string& root, double sentinel) {
  const fs::path images = fs::path(root) / "images";
  const fs::path dsms = fs::path(root) / "dsm";
  if (!fs::is_directory(images) || !fs::is_directory(dsms))
    throw DataError("dataset root must contain images/ and dsm/: " + root);

  std::map<std::string, std::string> image_by_stem, dsm_by_stem;
  for (const auto& e : fs::directory_iterator(images))
    if (e.path().extension() == ".png") image_by_stem[e.path().stem().string()] = e.path().string();
  for (const auto& e : fs::directory_iterator(dsms))
    if (e.path().extension() == ".f32") dsm_by_stem[e.path().stem().string()] = e.path().string();

  std::vector<std::string> unmatched;
  for (const auto& [stem, _] : image_by_stem)
    if (!dsm_by_stem.count(stem)) unmatched.push_back(stem + " (image without dsm)");
  for (const auto& [stem, _] : dsm_by_stem)
    if (!image_by_stem.count(stem)) unmatched.push_back(stem + " (dsm without image)");
  if (!unmatched.empty()) {
    std::string msg = "unmatched dataset stems:";
    for (const std::string& s : unmatched) msg += " " + s;
    throw DataError(msg);
  }
  if (image_by_stem.empty()) throw DataError("empty dataset: " + root);

  Dataset ds;
  ds.root = root;
  ds.sentinel = sentinel;
  bool first = true;
  for (const auto& [stem, img_path] : image_by_stem) {
    DatasetEntry e{stem, img_path, dsm_by_stem[stem]};
    RasterHeader hdr;
    std::ifstream hf(header_path_for(e.dsm_path));
    if (!(hf >> hdr.rows >> hdr.cols >> hdr.resolution >> hdr.h_min >> hdr.h_max))
      throw DataError("malformed raster header: " + header_path_for(e.dsm_path));
    if (first) {
      ds.h_min = hdr.h_min;
      ds.h_max = hdr.h_max;
      ds.resolution = hdr.resolution;
      first = false;
    } else {
      ds.h_min = std::min(ds.h_min, hdr.h_min);
      ds.h_max = std::max(ds.h_max, hdr.h_max);
    }
    ds.entries.push_back(std::move(e));
  }
  return ds;
}

std::vector<std::string> read_split_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split list: " + path);
  std::vector<std::string> stems;
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string stem;
    if (ss >> stem) stems.push_back(stem);
  }
  return stems;
}

Dataset filter_dataset(const Dataset& ds, const std::vector<std::string>& stems) {
  Dataset out = ds;
  out.entries.clear();
  std::map<std::string, const DatasetEntry*> by_stem;
  for (const DatasetEntry& e : ds.entries) by_stem[e.stem] = &e;
  for (const std::string& s : stems) {
    auto it = by_stem.find(s);
    if (it == by_stem.end()) throw DataError("split references unknown stem: " + s);
    out.entries.push_back(*it->second);
  }
  if (out.entries.empty()) throw DataError("empty split selection");
  return out;
}

TilePair load_entry(const Dataset& ds, const DatasetEntry& entry) {
  TilePair t = load_tile_pair(entry.image_path, entry.dsm_path, ds.sentinel);
  // dataset-level normalization range overrides per-file ranges
  t.h_min = ds.h_min;
  t.h_max = ds.h_max;
  return t;
}

void generate_synthetic_dataset(const std::string& root, const SynthSpec& base, int n_scenes,
                                double val_fraction) {
  if (n_scenes < 1) throw UsageError("synthetic dataset needs at least one scene");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw UsageError("val_fraction must be in [0, 1)");
  fs::create_directories(fs::path(root) / "splits");
  std::ofstream train_list((fs::path(root) / "splits" / "train.txt").string());
  std::ofstream val_list((fs::path(root) / "splits" / "val.txt").string());
  const int n_val = std::max(n_scenes > 1 ? 1 : 0, static_cast<int>(n_scenes * val_fraction));
  for (int i = 0; i < n_scenes; ++i) {
    SynthSpec spec = base;
    spec.seed = Rng::mix(base.seed, static_cast<uint64_t>(i));
    Rng rng(spec.seed);
    ScenePair scene = synth_scene(spec, rng);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "scene%04d", i);
    save_scene(root, stem, scene);
    if (i >= n_scenes - n_val) val_list << stem << "\n";
    else train_list << stem << "\n";
  }
}

}  // namespace heightformer
