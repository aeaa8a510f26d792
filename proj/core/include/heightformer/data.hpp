#pragma once

#include <string>
#include <vector>

#include "heightformer/rng.hpp"
#include "heightformer/tensor.hpp"

namespace heightformer {

// Co-registered ortho image + surface-height raster + valid-pixel mask.
struct ScenePair {
  Tensor image;  // [H,W,3], unit-scaled
  Tensor dsm;    // [H,W], meters
  Tensor mask;   // [H,W], 1 valid / 0 invalid
  double h_min = 0.0, h_max = 1.0;
  double resolution = 1.0;  // meters per pixel

  int64_t rows() const { return dsm.dim(0); }
  int64_t cols() const { return dsm.dim(1); }
  void validate() const;
};

struct TilePair : ScenePair {
  int64_t row0 = 0, col0 = 0;  // origin in the parent scene
};

struct AugmentConfig {
  int crop_size = 448;
  double rotate_prob = 0.5;
  double rotate_degrees = 2.5;
  double photo_prob = 0.5;
  double gamma_lo = 0.9, gamma_hi = 1.1;
  double brightness_lo = 0.75, brightness_hi = 1.25;
  double color_lo = 0.9, color_hi = 1.1;
  void validate(int64_t tile_size) const;
};

struct SynthSpec {
  int64_t size = 512;
  double ground_height = 0.0;
  int buildings = 12;
  double building_height_lo = 3.0, building_height_hi = 18.0;
  int64_t building_foot_lo = 24, building_foot_hi = 96;
  int trees = 30;
  double tree_height_lo = 2.0, tree_height_hi = 10.0;
  double road_fraction = 0.08;
  // linear ramp width at building walls, in pixels; 0 keeps edges sharp
  double edge_bevel_px = 0.0;
  double pixel_noise = 0.03;  // uniform render noise amplitude
  double h_min = 0.0, h_max = 25.0;
  // One shared building height per scene; makes per-scene height
  // distributions strongly bimodal (ground mode + roof mode).
  bool per_scene_building_height = false;
  uint64_t seed = 0;
  void validate() const;
};

// (d - h_min) / (h_max - h_min); inverse of rescale_heights.
Tensor normalize_heights(const Tensor& dsm, double h_min, double h_max);
Tensor rescale_heights(const Tensor& unit, double h_min, double h_max);

// Edge-aligned tiling origins: stride-sized steps, last origin shifted
// inward so the whole extent is covered without padding.
std::vector<int64_t> grid_origins(int64_t extent, int64_t tile, int64_t stride);
std::vector<TilePair> crop_grid(const ScenePair& scene, int64_t tile);
TilePair crop_window(const ScenePair& scene, int64_t row0, int64_t col0, int64_t size);

// Rotation about the tile center. Image and heights are sampled
// bilinearly with identical index maps; pixels leaving the frame (or
// touching invalid source pixels) come back mask=0.
TilePair rotate_pair(const TilePair& in, double degrees);

TilePair augment(const TilePair& in, Rng& rng, const AugmentConfig& cfg);

// Deterministic function of (spec, rng state): flat ground, box buildings,
// smooth canopy blobs, road strips; surface brightness tracks height.
ScenePair synth_scene(const SynthSpec& spec, Rng& rng);

TilePair load_tile_pair(const std::string& image_path, const std::string& dsm_path,
                        double sentinel = -9999.0);
void save_scene(const std::string& root, const std::string& stem, const ScenePair& scene,
                double sentinel = -9999.0);

struct DatasetEntry {
  std::string stem, image_path, dsm_path;
};

struct Dataset {
  std::string root;
  std::vector<DatasetEntry> entries;
  double h_min = 0.0, h_max = 0.0;
  double resolution = 1.0;
  double sentinel = -9999.0;
};

// Pairs <root>/images/*.png with <root>/dsm/*.f32 by stem; unmatched stems
// are an error naming the offenders. The height range is the union of the
// raster headers.
Dataset scan_dataset(const std::string& root, double sentinel = -9999.0);
std::vector<std::string> read_split_list(const std::string& path);
Dataset filter_dataset(const Dataset& ds, const std::vector<std::string>& stems);
TilePair load_entry(const Dataset& ds, const DatasetEntry& entry);

// Writes n_scenes synthetic scenes (seed, seed+1, ...) plus
// splits/train.txt and splits/val.txt under root.
void generate_synthetic_dataset(const std::string& root, const SynthSpec& base, int n_scenes,
                                double val_fraction);

}  // namespace heightformer
