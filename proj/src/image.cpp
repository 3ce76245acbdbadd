#include "aptrack/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace aptrack {

void save_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("image: cannot open '" + path + "' for writing");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<unsigned char> row(img.w * 3);
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w * 3; ++x) {
      double v = img.px[(y * img.w) * 3 + x];
      v = std::min(1.0, std::max(0.0, v));
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("image: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("image: '" + path + "' is not a binary PPM");
  auto next_token = [&in, &path]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("image: truncated PPM header in '" + path + "'");
  };
  const std::size_t w = std::stoul(next_token());
  const std::size_t h = std::stoul(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw std::runtime_error("image: only 8-bit PPM supported");
  in.get();  // single whitespace after maxval
  Image img(h, w);
  std::vector<unsigned char> raw(w * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("image: truncated PPM payload in '" + path + "'");
  for (std::size_t i = 0; i < raw.size(); ++i) img.px[i] = raw[i] / 255.0;
  return img;
}

Image crop_resize(const Image& src, double cx, double cy, double side, std::size_t out_size) {
  if (side <= 0.0) throw std::runtime_error("image: crop side must be positive");
  Image out(out_size, out_size);
  const double x0 = cx - side / 2.0;
  const double y0 = cy - side / 2.0;
  const double step = side / static_cast<double>(out_size);
  auto sample = [&src](long y, long x, std::size_t c) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(src.h) || x >= static_cast<long>(src.w))
      return 0.0;
    return src.px[(static_cast<std::size_t>(y) * src.w + static_cast<std::size_t>(x)) * 3 + c];
  };
  for (std::size_t oy = 0; oy < out_size; ++oy) {
    const double sy = y0 + (oy + 0.5) * step - 0.5;
    const long iy = static_cast<long>(std::floor(sy));
    const double fy = sy - iy;
    for (std::size_t ox = 0; ox < out_size; ++ox) {
      const double sx = x0 + (ox + 0.5) * step - 0.5;
      const long ix = static_cast<long>(std::floor(sx));
      const double fx = sx - ix;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v00 = sample(iy, ix, c);
        const double v01 = sample(iy, ix + 1, c);
        const double v10 = sample(iy + 1, ix, c);
        const double v11 = sample(iy + 1, ix + 1, c);
        out.at(oy, ox, c) = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                            fy * ((1.0 - fx) * v10 + fx * v11);
      }
    }
  }
  return out;
}

void quantize_u8(Image& img) {
  for (double& v : img.px) {
    v = std::min(1.0, std::max(0.0, v));
    v = std::lround(v * 255.0) / 255.0;
  }
}

}  // namespace aptrack
