#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace aptrack {

/// H x W x 3 image, interleaved row-major, values in [0,1].
struct Image {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> px;

  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0)
      : h(height), w(width), px(height * width * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return px[(y * w + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return px[(y * w + x) * 3 + c]; }
};

// Binary PPM (P6, 8-bit). Loading normalizes to [0,1]; saving clamps and
// rounds.
void save_ppm(const std::string& path, const Image& img);
Image load_ppm(const std::string& path);

/// Square crop of side `side` centered at (cx, cy), bilinearly resized to
/// out_size x out_size. Samples outside the source read as 0.
Image crop_resize(const Image& src, double cx, double cy, double side, std::size_t out_size);

/// Quantize to the 8-bit grid used by the PPM container, in place.
void quantize_u8(Image& img);

}  // namespace aptrack
