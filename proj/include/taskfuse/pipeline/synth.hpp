#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "taskfuse/core/rng.hpp"
#include "taskfuse/data/dataset.hpp"
#include "taskfuse/pipeline/image_io.hpp"

namespace taskfuse {

// Synthetic two-modality scenes with shared geometry: source A renders warm
// blobs on a cool background (smooth, object-dominant), source B renders the
// same scene with rich background texture and faint objects. The exact object
// support comes along as a mask, which downstream tasks may use as a target.
struct SynthStyle {
  int height = 96;
  int width = 96;
  int blobs = 3;
  double blob_gain_a = 0.75;   // object brightness over background in A
  double blob_gain_b = 0.18;   // faint object trace in B
  double texture_freq = 0.35;  // radians per pixel of the B texture carriers
  double texture_amp = 0.28;
  double noise = 0.015;
  bool invert_b = false;  // dark-field variant for task-style diversity
};

namespace synth_detail {

struct Blob {
  double cy, cx, ry, rx, angle;
};

inline double smoothstep(double e0, double e1, double v) {
  const double t = std::clamp((v - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

inline double blob_field(const std::vector<Blob>& blobs, double y, double x) {
  double best = 0.0;
  for (const auto& b : blobs) {
    const double dy = y - b.cy, dx = x - b.cx;
    const double ca = std::cos(b.angle), sa = std::sin(b.angle);
    const double u = (ca * dx + sa * dy) / b.rx;
    const double v = (-sa * dx + ca * dy) / b.ry;
    const double d = std::sqrt(u * u + v * v);
    best = std::max(best, 1.0 - smoothstep(0.8, 1.1, d));
  }
  return best;
}

}  // namespace synth_detail

inline ImagePair synth_pair(const std::string& id, Rng rng, const SynthStyle& style = {}) {
  const int h = style.height, w = style.width;
  std::vector<synth_detail::Blob> blobs;
  for (int i = 0; i < style.blobs; ++i) {
    synth_detail::Blob b;
    b.cy = rng.uniform(0.15, 0.85) * h;
    b.cx = rng.uniform(0.15, 0.85) * w;
    b.ry = rng.uniform(0.06, 0.16) * h;
    b.rx = rng.uniform(0.06, 0.16) * w;
    b.angle = rng.uniform(0.0, 3.14159265358979323846);
    blobs.push_back(b);
  }
  const double phase1 = rng.uniform(0.0, 6.28), phase2 = rng.uniform(0.0, 6.28);
  const double tilt = rng.uniform(0.3, 0.9);

  ImagePair pair;
  pair.id = id;
  pair.a = Tensor({1, 1, h, w});
  pair.b = Tensor({1, 1, h, w});
  pair.has_mask = true;
  pair.mask = Tensor({1, 1, h, w});

  Rng noise_a = rng.derive("noise-a"), noise_b = rng.derive("noise-b");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double support = synth_detail::blob_field(blobs, y, x);
      pair.mask.at(0, 0, y, x) = support > 0.5 ? 1.0 : 0.0;

      const double base_a = 0.12 + 0.05 * (static_cast<double>(y) / h);
      double va = base_a + style.blob_gain_a * support + style.noise * noise_a.normal();
      pair.a.at(0, 0, y, x) = std::clamp(va, 0.0, 1.0);

      const double tex = std::sin(style.texture_freq * x + phase1) *
                             std::cos(style.texture_freq * tilt * y + phase2) +
                         0.5 * std::sin(style.texture_freq * 2.3 * (x + y) + phase1);
      double vb = 0.5 + style.texture_amp * 0.5 * tex + style.blob_gain_b * support +
                  style.noise * noise_b.normal();
      if (style.invert_b) vb = 1.0 - vb;
      pair.b.at(0, 0, y, x) = std::clamp(vb, 0.0, 1.0);
    }
  return pair;
}

inline std::vector<ImagePair> synth_batch(int count, Rng rng, const SynthStyle& style = {},
                                          const std::string& prefix = "scene") {
  std::vector<ImagePair> out;
  for (int i = 0; i < count; ++i) {
    char tag[16];
    std::snprintf(tag, sizeof(tag), "%s%03d", prefix.c_str(), i);
    out.push_back(synth_pair(tag, rng.derive(tag), style));
  }
  return out;
}

// Renders a batch to disk in the <id>_A / <id>_B / <id>_mask layout the
// ingest step expects.
inline void synth_to_directory(const std::string& dir, int count, Rng rng,
                               const SynthStyle& style = {}) {
  std::filesystem::create_directories(dir);
  for (const auto& pair : synth_batch(count, rng, style)) {
    write_pgm(dir + "/" + pair.id + "_A.pgm", pair.a);
    write_pgm(dir + "/" + pair.id + "_B.pgm", pair.b);
    write_pgm(dir + "/" + pair.id + "_mask.pgm", pair.mask);
  }
}

}  // namespace taskfuse
