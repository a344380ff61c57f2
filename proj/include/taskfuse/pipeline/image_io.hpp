#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/core/tensor.hpp"

namespace taskfuse {

// Grayscale and color inputs via the portable anymap formats (P2/P5 gray,
// P3/P6 color). Color is reduced to BT.601 luminance for fusion; the chroma
// planes ride along so fused output can be recombined.
struct LoadedImage {
  Tensor y{{1, 1, 1, 1}};  // luminance in [0,1]
  bool color = false;
  Tensor cb{{1, 1, 1, 1}};
  Tensor cr{{1, 1, 1, 1}};
};

namespace io_detail {

inline int next_token(std::istream& in) {
  // skips whitespace and '#' comments, then reads one nonnegative integer
  while (true) {
    const int c = in.peek();
    if (c == EOF) throw std::runtime_error("image header ended early");
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value) || value < 0) throw std::runtime_error("bad integer in image header");
  return value;
}

inline double read_sample(std::istream& in, bool binary, int maxval) {
  long raw;
  if (binary) {
    if (maxval < 256) {
      const int c = in.get();
      if (c == EOF) throw std::runtime_error("image data ended early");
      raw = c;
    } else {
      const int hi = in.get(), lo = in.get();
      if (hi == EOF || lo == EOF) throw std::runtime_error("image data ended early");
      raw = (static_cast<long>(hi) << 8) | lo;
    }
  } else {
    raw = next_token(in);
  }
  if (raw > maxval) throw std::runtime_error("sample exceeds the declared maxval");
  return static_cast<double>(raw) / maxval;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace io_detail

inline LoadedImage read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path);
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
    throw std::runtime_error("unsupported image format in " + path + " (want P2/P3/P5/P6)");
  const bool color = kind == '3' || kind == '6';
  const bool binary = kind == '5' || kind == '6';
  const int w = io_detail::next_token(in);
  const int h = io_detail::next_token(in);
  const int maxval = io_detail::next_token(in);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    throw std::runtime_error("bad image dimensions in " + path);
  if (binary) in.get();  // single whitespace before the raster

  LoadedImage img;
  img.color = color;
  img.y = Tensor({1, 1, h, w});
  if (color) {
    img.cb = Tensor({1, 1, h, w});
    img.cr = Tensor({1, 1, h, w});
  }
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      if (color) {
        const double r = io_detail::read_sample(in, binary, maxval);
        const double g = io_detail::read_sample(in, binary, maxval);
        const double b = io_detail::read_sample(in, binary, maxval);
        const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
        img.y.at(0, 0, yy, xx) = luma;
        img.cb.at(0, 0, yy, xx) = 0.564 * (b - luma) + 0.5;
        img.cr.at(0, 0, yy, xx) = 0.713 * (r - luma) + 0.5;
      } else {
        img.y.at(0, 0, yy, xx) = io_detail::read_sample(in, binary, maxval);
      }
    }
  return img;
}

inline void write_pgm(const std::string& path, const Tensor& img) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 1)
    throw std::invalid_argument("write_pgm: expected (1,1,H,W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path);
  const int h = img.dim(2), w = img.dim(3);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx)
      out.put(static_cast<char>(io_detail::to_byte(img.at(0, 0, yy, xx))));
}

// Recombines a fused luminance with kept chroma planes into an RGB image.
inline void write_ppm(const std::string& path, const Tensor& y, const Tensor& cb,
                      const Tensor& cr) {
  if (y.rank() != 4 || y.dim(0) != 1 || y.dim(1) != 1)
    throw std::invalid_argument("write_ppm: expected (1,1,H,W)");
  check_same_shape(y, cb, "write_ppm");
  check_same_shape(y, cr, "write_ppm");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path);
  const int h = y.dim(2), w = y.dim(3);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) {
      const double luma = y.at(0, 0, yy, xx);
      const double pb = cb.at(0, 0, yy, xx) - 0.5;
      const double pr = cr.at(0, 0, yy, xx) - 0.5;
      out.put(static_cast<char>(io_detail::to_byte(luma + 1.403 * pr)));
      out.put(static_cast<char>(io_detail::to_byte(luma - 0.344 * pb - 0.714 * pr)));
      out.put(static_cast<char>(io_detail::to_byte(luma + 1.773 * pb)));
    }
}

}  // namespace taskfuse
