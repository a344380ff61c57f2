#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "taskfuse/core/tensor.hpp"

namespace taskfuse {

// One registered source pair: two aligned single-channel images in [0,1].
// Color inputs keep source B's chroma planes so a fused luminance can be
// recombined into a color image; generated data may carry a known
// object mask for the surrogate semantic task.
struct ImagePair {
  std::string id;
  Tensor a{{1, 1, 1, 1}};
  Tensor b{{1, 1, 1, 1}};
  bool has_color = false;
  Tensor cb{{1, 1, 1, 1}};
  Tensor cr{{1, 1, 1, 1}};
  bool has_mask = false;
  Tensor mask{{1, 1, 1, 1}};
};

inline void check_pair(const ImagePair& p, const char* where) {
  if (p.a.dim(0) != 1 || p.a.dim(1) != 1)
    throw std::invalid_argument(std::string(where) + ": sources must be (1,1,H,W)");
  check_same_shape(p.a, p.b, where);
}

// Stack the pairs into one (N,2,H,W) network input; channel 0 carries source
// A, channel 1 source B. All pairs must share spatial dimensions.
inline Tensor stack_pair_inputs(const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("stack_pair_inputs: empty batch");
  check_pair(pairs[0], "stack_pair_inputs");
  const int h = pairs[0].a.dim(2), w = pairs[0].a.dim(3);
  Tensor out({static_cast<int>(pairs.size()), 2, h, w});
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    check_pair(pairs[n], "stack_pair_inputs");
    if (pairs[n].a.dim(2) != h || pairs[n].a.dim(3) != w)
      throw std::invalid_argument("stack_pair_inputs: pairs disagree on spatial size");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.at(static_cast<int>(n), 0, y, x) = pairs[n].a.at(0, 0, y, x);
        out.at(static_cast<int>(n), 1, y, x) = pairs[n].b.at(0, 0, y, x);
      }
  }
  return out;
}

// Stack one side of each pair into (N,1,H,W), for loss targets.
inline Tensor stack_sources(const std::vector<ImagePair>& pairs, bool side_a) {
  if (pairs.empty()) throw std::invalid_argument("stack_sources: empty batch");
  const int h = pairs[0].a.dim(2), w = pairs[0].a.dim(3);
  Tensor out({static_cast<int>(pairs.size()), 1, h, w});
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const Tensor& src = side_a ? pairs[n].a : pairs[n].b;
    if (src.dim(2) != h || src.dim(3) != w)
      throw std::invalid_argument("stack_sources: pairs disagree on spatial size");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(static_cast<int>(n), 0, y, x) = src.at(0, 0, y, x);
  }
  return out;
}

// Deterministic equal split: first half updates parameters, second half
// updates the architecture.
inline std::pair<std::vector<ImagePair>, std::vector<ImagePair>> split_halves(
    const std::vector<ImagePair>& all) {
  if (all.size() < 2)
    throw std::invalid_argument("split_halves: need at least two pairs to split");
  const std::size_t mid = all.size() / 2;
  return {std::vector<ImagePair>(all.begin(), all.begin() + mid),
          std::vector<ImagePair>(all.begin() + mid, all.end())};
}

}  // namespace taskfuse
