#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/core/tensor.hpp"

namespace taskfuse {

// Netpbm loader covering P2/P5 (gray) and P3/P6 (color). Color images are
// reduced to BT.601 luma on load; intensities come back in [0,1] as a
// (1,1,H,W) tensor. Good enough for a pipeline that works on single-channel
// registered pairs, and keeps the project free of image-library dependencies.

namespace pnm_detail {

inline void skip_ws_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_int(std::istream& in) {
  skip_ws_comments(in);
  int v = 0;
  if (!(in >> v)) throw std::runtime_error("pnm: truncated header");
  return v;
}

}  // namespace pnm_detail

inline Tensor load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pnm: cannot open " + path);
  char p = 0, m = 0;
  in.get(p);
  in.get(m);
  if (p != 'P' || (m != '2' && m != '3' && m != '5' && m != '6'))
    throw std::runtime_error("pnm: unsupported magic in " + path);
  const bool color = m == '3' || m == '6';
  const bool binary = m == '5' || m == '6';
  const int W = pnm_detail::read_int(in);
  const int H = pnm_detail::read_int(in);
  const int maxval = pnm_detail::read_int(in);
  if (W <= 0 || H <= 0 || maxval <= 0 || maxval > 65535)
    throw std::runtime_error("pnm: bad dimensions in " + path);
  const int samples = W * H * (color ? 3 : 1);
  std::vector<double> raw(static_cast<std::size_t>(samples));
  if (binary) {
    in.get();  // single whitespace after maxval
    if (maxval < 256) {
      std::vector<std::uint8_t> buf(static_cast<std::size_t>(samples));
      in.read(reinterpret_cast<char*>(buf.data()), samples);
      if (!in) throw std::runtime_error("pnm: truncated data in " + path);
      for (int i = 0; i < samples; ++i) raw[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(i)];
    } else {
      std::vector<std::uint8_t> buf(static_cast<std::size_t>(samples) * 2);
      in.read(reinterpret_cast<char*>(buf.data()), samples * 2);
      if (!in) throw std::runtime_error("pnm: truncated data in " + path);
      for (int i = 0; i < samples; ++i)
        raw[static_cast<std::size_t>(i)] =
            256.0 * buf[static_cast<std::size_t>(2 * i)] + buf[static_cast<std::size_t>(2 * i + 1)];
    }
  } else {
    for (int i = 0; i < samples; ++i) raw[static_cast<std::size_t>(i)] = pnm_detail::read_int(in);
  }

  Tensor out({1, 1, H, W});
  const double inv = 1.0 / maxval;
  if (color) {
    for (int i = 0; i < W * H; ++i) {
      const double r = raw[static_cast<std::size_t>(3 * i)] * inv;
      const double g = raw[static_cast<std::size_t>(3 * i + 1)] * inv;
      const double b = raw[static_cast<std::size_t>(3 * i + 2)] * inv;
      out.v[static_cast<std::size_t>(i)] = 0.299 * r + 0.587 * g + 0.114 * b;
    }
  } else {
    for (int i = 0; i < W * H; ++i) out.v[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(i)] * inv;
  }
  return out;
}

// Writes a binary P5 image; values are clamped to [0,1] and quantized to 8
// bits with round-half-up.
inline void save_pgm(const std::string& path, const Tensor& img) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 1)
    throw std::invalid_argument("save_pgm: expected (1,1,H,W), got " + img.shape_str());
  const int H = img.dim(2), W = img.dim(3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pnm: cannot write " + path);
  out << "P5\n" << W << " " << H << "\n255\n";
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(H) * W);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double x = std::clamp(img.v[i], 0.0, 1.0);
    buf[i] = static_cast<std::uint8_t>(std::floor(x * 255.0 + 0.5));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void save_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3)
    throw std::invalid_argument("save_ppm: expected (1,3,H,W), got " + rgb.shape_str());
  const int H = rgb.dim(2), W = rgb.dim(3);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pnm: cannot write " + path);
  out << "P6\n" << W << " " << H << "\n255\n";
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb.at(0, c, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
            static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
      }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline Tensor clamp01(Tensor t) {
  for (auto& x : t.v) x = std::clamp(x, 0.0, 1.0);
  return t;
}

}  // namespace taskfuse
