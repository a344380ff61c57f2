#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/core/rng.hpp"
#include "taskfuse/data/dataset.hpp"
#include "taskfuse/pipeline/image_io.hpp"

namespace taskfuse {

struct IngestReport {
  std::vector<ImagePair> pairs;
  std::vector<std::string> warnings;
};

namespace ingest_detail {

struct PendingPair {
  std::string path_a, path_b, path_mask;
};

// strips "<id>_A.ext" into {"<id>", 'A'}; returns false for other names
inline bool split_name(const std::string& stem, std::string* id, std::string* role) {
  const auto pos = stem.rfind('_');
  if (pos == std::string::npos || pos == 0) return false;
  const std::string tail = stem.substr(pos + 1);
  if (tail != "A" && tail != "B" && tail != "mask") return false;
  *id = stem.substr(0, pos);
  *role = tail;
  return true;
}

inline void check_range(const Tensor& t, const std::string& what) {
  for (double x : t.v)
    if (!(x >= 0.0 && x <= 1.0)) throw std::runtime_error(what + ": pixel out of [0,1]");
}

}  // namespace ingest_detail

// Scans a flat directory for <id>_A.* / <id>_B.* image pairs, with an optional
// <id>_mask.* sidecar. Unpaired ids and size-mismatched pairs are skipped with
// a warning; an empty result is an error. Pairs come back sorted by id.
inline IngestReport ingest_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("ingest: not a directory: " + dir);

  std::map<std::string, ingest_detail::PendingPair> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string id, role;
    if (!ingest_detail::split_name(entry.path().stem().string(), &id, &role)) continue;
    auto& slot = found[id];
    if (role == "A")
      slot.path_a = entry.path().string();
    else if (role == "B")
      slot.path_b = entry.path().string();
    else
      slot.path_mask = entry.path().string();
  }

  IngestReport report;
  for (const auto& [id, slot] : found) {
    if (slot.path_a.empty() || slot.path_b.empty()) {
      report.warnings.push_back("skipping " + id + ": missing " +
                                (slot.path_a.empty() ? std::string("A") : std::string("B")) +
                                " source");
      continue;
    }
    LoadedImage a, b;
    try {
      a = read_image(slot.path_a);
      b = read_image(slot.path_b);
    } catch (const std::exception& e) {
      report.warnings.push_back("skipping " + id + ": " + e.what());
      continue;
    }
    if (a.y.dim(2) != b.y.dim(2) || a.y.dim(3) != b.y.dim(3)) {
      report.warnings.push_back("skipping " + id + ": source sizes differ");
      continue;
    }
    ImagePair pair;
    pair.id = id;
    pair.a = a.y;
    pair.b = b.y;
    if (b.color) {
      pair.has_color = true;
      pair.cb = b.cb;
      pair.cr = b.cr;
    }
    if (!slot.path_mask.empty()) {
      try {
        LoadedImage m = read_image(slot.path_mask);
        if (m.y.dim(2) != a.y.dim(2) || m.y.dim(3) != a.y.dim(3))
          throw std::runtime_error("mask size differs");
        pair.has_mask = true;
        pair.mask = m.y;
      } catch (const std::exception& e) {
        report.warnings.push_back("pair " + id + ": ignoring mask (" + e.what() + ")");
      }
    }
    ingest_detail::check_range(pair.a, "pair " + id + " source A");
    ingest_detail::check_range(pair.b, "pair " + id + " source B");
    report.pairs.push_back(std::move(pair));
  }
  if (report.pairs.empty())
    throw std::runtime_error("ingest: no usable image pairs in " + dir);
  return report;
}

namespace ingest_detail {

inline Tensor crop(const Tensor& src, int y0, int x0, int size) {
  Tensor out({1, 1, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(0, 0, y, x) = src.at(0, 0, y0 + y, x0 + x);
  return out;
}

inline Tensor flip_h(const Tensor& src) {
  const int h = src.dim(2), w = src.dim(3);
  Tensor out({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(0, 0, y, x) = src.at(0, 0, y, w - 1 - x);
  return out;
}

inline Tensor rot90(const Tensor& src) {
  const int h = src.dim(2), w = src.dim(3);
  Tensor out({1, 1, w, h});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(0, 0, x, h - 1 - y) = src.at(0, 0, y, x);
  return out;
}

}  // namespace ingest_detail

struct PatchifyOptions {
  int patch = 64;
  bool augment_flip = true;
  bool augment_rotate = true;
};

// Cuts each pair into a non-overlapping grid of square patches (stride equals
// the patch side, so a HxW image yields floor(H/p)*floor(W/p) of them) and
// applies the same random flip/rotation to both sources of a patch.
inline std::vector<ImagePair> patchify(const std::vector<ImagePair>& pairs,
                                       const PatchifyOptions& opt, Rng rng) {
  if (opt.patch < 1) throw std::invalid_argument("patchify: patch size must be positive");
  std::vector<ImagePair> out;
  for (const auto& pair : pairs) {
    const int h = pair.a.dim(2), w = pair.a.dim(3);
    const int rows = h / opt.patch, cols = w / opt.patch;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        ImagePair patch;
        patch.id = pair.id + "#" + std::to_string(r) + "_" + std::to_string(c);
        patch.a = ingest_detail::crop(pair.a, r * opt.patch, c * opt.patch, opt.patch);
        patch.b = ingest_detail::crop(pair.b, r * opt.patch, c * opt.patch, opt.patch);
        if (pair.has_mask) {
          patch.has_mask = true;
          patch.mask = ingest_detail::crop(pair.mask, r * opt.patch, c * opt.patch, opt.patch);
        }
        const bool flip = opt.augment_flip && rng.uniform() < 0.5;
        const int quarter = opt.augment_rotate ? static_cast<int>(rng.below(4)) : 0;
        if (flip) {
          patch.a = ingest_detail::flip_h(patch.a);
          patch.b = ingest_detail::flip_h(patch.b);
          if (patch.has_mask) patch.mask = ingest_detail::flip_h(patch.mask);
        }
        for (int q = 0; q < quarter; ++q) {
          patch.a = ingest_detail::rot90(patch.a);
          patch.b = ingest_detail::rot90(patch.b);
          if (patch.has_mask) patch.mask = ingest_detail::rot90(patch.mask);
        }
        out.push_back(std::move(patch));
      }
  }
  return out;
}

}  // namespace taskfuse
