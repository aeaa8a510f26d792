#pragma once

#include <cstdint>
#include <string>

#include "heightformer/tensor.hpp"

namespace heightformer {

// 8-bit PNG <-> unit-scaled float tensors, [H,W,3].
Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& img01);

// Raw float32 raster with a text sidecar: "rows cols resolution h_min h_max".
struct RasterHeader {
  int64_t rows = 0, cols = 0;
  double resolution = 1.0;
  double h_min = 0.0, h_max = 0.0;
};

std::string header_path_for(const std::string& f32_path);
Tensor read_f32_raster(const std::string& f32_path, RasterHeader* hdr = nullptr);  // [H,W]
void write_f32_raster(const std::string& f32_path, const Tensor& raster, const RasterHeader& hdr);

enum class Colormap { Viridis, Diverging };

// Renders a scalar raster through a colormap and appends a labeled
// colorbar strip. Diverging maps should be called with lo = -hi.
void write_colormap_png(const std::string& path, const Tensor& values, double lo, double hi, Colormap map);

}  // namespace heightformer
