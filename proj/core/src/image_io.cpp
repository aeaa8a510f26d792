#include "heightformer/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "heightformer/errors.hpp"

namespace heightformer {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Tensor read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unreadable PNG file: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int64_t h = png_get_image_height(png, info);
  const int64_t w = png_get_image_width(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG channel layout in " + path);
  }

  std::vector<png_byte> row(static_cast<size_t>(w) * 3);
  Tensor img({h, w, 3});
  for (int64_t y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int64_t i = 0; i < w * 3; ++i) img[y * w * 3 + i] = row[static_cast<size_t>(i)] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Tensor& img01) {
  if (img01.ndim() != 3 || img01.dim(2) != 3) throw DataError("write_png: expected [H,W,3] tensor");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot create image file: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG write failed: " + path);
  }
  png_init_io(png, fp.get());
  const int64_t h = img01.dim(0), w = img01.dim(1);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(w) * 3);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t i = 0; i < w * 3; ++i) {
      const double v = std::clamp(img01[y * w * 3 + i], 0.0, 1.0);
      row[static_cast<size_t>(i)] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::string header_path_for(const std::string& f32_path) {
  const size_t dot = f32_path.rfind('.');
  if (dot == std::string::npos) return f32_path + ".hdr";
  return f32_path.substr(0, dot) + ".hdr";
}

Tensor read_f32_raster(const std::string& f32_path, RasterHeader* hdr_out) {
  RasterHeader hdr;
  {
    std::ifstream hf(header_path_for(f32_path));
    if (!hf) throw DataError("missing raster header: " + header_path_for(f32_path));
    if (!(hf >> hdr.rows >> hdr.cols >> hdr.resolution >> hdr.h_min >> hdr.h_max))
      throw DataError("malformed raster header: " + header_path_for(f32_path));
  }
  if (hdr.rows <= 0 || hdr.cols <= 0) throw DataError("degenerate raster dims in " + f32_path);

  std::ifstream in(f32_path, std::ios::binary);
  if (!in) throw DataError("cannot open raster file: " + f32_path);
  std::vector<float> buf(static_cast<size_t>(hdr.rows * hdr.cols));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw DataError("raster file truncated: " + f32_path);

  Tensor t({hdr.rows, hdr.cols});
  for (size_t i = 0; i < buf.size(); ++i) t[static_cast<int64_t>(i)] = buf[i];
  if (hdr_out) *hdr_out = hdr;
  return t;
}

void write_f32_raster(const std::string& f32_path, const Tensor& raster, const RasterHeader& hdr) {
  if (raster.ndim() != 2) throw DataError("write_f32_raster: expected [H,W] tensor");
  {
    std::ofstream hf(header_path_for(f32_path));
    if (!hf) throw DataError("cannot create raster header: " + header_path_for(f32_path));
    char line[160];
    std::snprintf(line, sizeof(line), "%lld %lld %.17g %.17g %.17g\n",
                  static_cast<long long>(raster.dim(0)), static_cast<long long>(raster.dim(1)),
                  hdr.resolution, hdr.h_min, hdr.h_max);
    hf << line;
  }
  std::ofstream out(f32_path, std::ios::binary);
  if (!out) throw DataError("cannot create raster file: " + f32_path);
  std::vector<float> buf(static_cast<size_t>(raster.numel()));
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(raster[static_cast<int64_t>(i)]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

namespace {

// Anchor tables sampled from the usual perceptually-uniform ramp.
constexpr double kViridis[][3] = {
    {0.267, 0.005, 0.329}, {0.283, 0.131, 0.449}, {0.262, 0.242, 0.521}, {0.220, 0.343, 0.549},
    {0.177, 0.438, 0.558}, {0.143, 0.523, 0.556}, {0.120, 0.607, 0.540}, {0.166, 0.691, 0.497},
    {0.320, 0.771, 0.411}, {0.526, 0.833, 0.288}, {0.762, 0.876, 0.137}, {0.993, 0.906, 0.144}};

constexpr double kDiverging[][3] = {
    {0.020, 0.188, 0.380}, {0.129, 0.400, 0.675}, {0.455, 0.678, 0.820}, {0.820, 0.898, 0.941},
    {0.969, 0.969, 0.969}, {0.992, 0.859, 0.780}, {0.957, 0.647, 0.510}, {0.839, 0.376, 0.302},
    {0.404, 0.000, 0.122}};

void map_color(double t, Colormap map, double rgb[3]) {
  t = std::clamp(t, 0.0, 1.0);
  const double (*anchors)[3] = map == Colormap::Viridis ? kViridis : kDiverging;
  const int n = map == Colormap::Viridis ? 12 : 9;
  const double x = t * (n - 1);
  const int i = std::min(static_cast<int>(x), n - 2);
  const double f = x - i;
  for (int c = 0; c < 3; ++c) rgb[c] = anchors[i][c] * (1 - f) + anchors[i + 1][c] * f;
}

// 3x5 digit font for colorbar labels.
const char* glyph(char c) {
  switch (c) {
    case '0': return "111101101101111";
    case '1': return "010110010010111";
    case '2': return "111001111100111";
    case '3': return "111001111001111";
    case '4': return "101101111001001";
    case '5': return "111100111001111";
    case '6': return "111100111101111";
    case '7': return "111001010010010";
    case '8': return "111101111101111";
    case '9': return "111101111001111";
    case '-': return "000000111000000";
    case '.': return "000000000000010";
    case '+': return "000010111010000";
    case 'e': return "011101110100011";
    default: return "000000000000000";
  }
}

void draw_text(Tensor& img, int64_t top, int64_t left, const std::string& text) {
  const int64_t h = img.dim(0), w = img.dim(1);
  int64_t x = left;
  for (char c : text) {
    const char* g = glyph(c);
    for (int gy = 0; gy < 5; ++gy)
      for (int gx = 0; gx < 3; ++gx) {
        if (g[gy * 3 + gx] != '1') continue;
        const int64_t py = top + gy, px = x + gx;
        if (py < 0 || py >= h || px < 0 || px >= w) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(py, px, ch) = 1.0;
      }
    x += 4;
  }
}

}  // namespace

void write_colormap_png(const std::string& path, const Tensor& values, double lo, double hi, Colormap map) {
  if (values.ndim() != 2) throw DataError("write_colormap_png: expected [H,W] tensor");
  const int64_t h = values.dim(0), w = values.dim(1);
  const int64_t bar_h = 10, label_h = 8, gap = 2;
  Tensor canvas({h + gap + bar_h + label_h, w, 3});
  const double span = hi > lo ? hi - lo : 1.0;
  double rgb[3];
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      map_color((values.at(y, x) - lo) / span, map, rgb);
      for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = rgb[c];
    }
  for (int64_t y = h + gap; y < h + gap + bar_h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      map_color(static_cast<double>(x) / std::max<int64_t>(1, w - 1), map, rgb);
      for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = rgb[c];
    }
  char label[32];
  std::snprintf(label, sizeof(label), "%.4g", lo);
  draw_text(canvas, h + gap + bar_h + 2, 1, label);
  std::snprintf(label, sizeof(label), "%.4g", hi);
  std::string hi_s = label;
  draw_text(canvas, h + gap + bar_h + 2, w - static_cast<int64_t>(hi_s.size()) * 4 - 1, hi_s);
  write_png(path, canvas);
}

}  // namespace heightformer
