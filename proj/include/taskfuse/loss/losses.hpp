#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "taskfuse/core/tape.hpp"
#include "taskfuse/core/tensor.hpp"

namespace taskfuse {

// Loss hyper-parameters. mu trades intensity vs structure inside the task
// loss, eta trades task loss vs fusion loss in the joint objective. SSIM
// window defaults to the standard 11/1.5 but is configurable so small
// fixtures can use a narrower one.
struct LossWeights {
  double mu = 1.0;
  double eta = 0.5;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  int feature_window = 5;
  std::string feature_weights = "gradient";  // gradient | external

  void validate() const {
    if (mu < 0.0 || eta < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    if (ssim_window < 3 || ssim_window % 2 == 0)
      throw std::invalid_argument("ssim window must be odd and >= 3");
  }
};

// Mean squared difference.
inline ad::Var intensity_loss(ad::Var a, ad::Var b) {
  check_same_shape(a.val(), b.val(), "intensity_loss");
  ad::Var d = ad::sub(a, b);
  return ad::mean_all(ad::mul(d, d));
}

inline Tensor gaussian_window(int size, double sigma) {
  Tensor w({1, 1, size, size});
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - c, dx = x - c;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w.at(0, 0, y, x) = g;
      total += g;
    }
  for (auto& x : w.v) x /= total;
  return w;
}

// Mean local SSIM over valid Gaussian-weighted windows. Identical inputs give
// exactly 1: every intermediate is computed by the same expression for both
// arguments, so numerator and denominator agree bitwise.
inline ad::Var ssim_index(ad::Var a, ad::Var b, const LossWeights& w) {
  check_same_shape(a.val(), b.val(), "ssim");
  if (a.val().rank() != 4 || a.val().dim(1) != 1)
    throw std::invalid_argument("ssim: expected (N,1,H,W), got " + a.val().shape_str());
  if (a.val().dim(2) < w.ssim_window || a.val().dim(3) < w.ssim_window)
    throw std::invalid_argument("ssim: image smaller than window");
  ad::Tape& t = *a.tape;
  ad::Var win = ad::leaf(t, gaussian_window(w.ssim_window, w.ssim_sigma));
  ad::Var zb = ad::leaf(t, Tensor::zeros({1}));
  auto blur = [&](ad::Var x) { return ad::conv2d(x, win, zb, ad::Pad::Valid); };

  ad::Var mu1 = blur(a), mu2 = blur(b);
  ad::Var s11 = ad::sub(blur(ad::mul(a, a)), ad::mul(mu1, mu1));
  ad::Var s22 = ad::sub(blur(ad::mul(b, b)), ad::mul(mu2, mu2));
  ad::Var s12 = ad::sub(blur(ad::mul(a, b)), ad::mul(mu1, mu2));

  ad::Var num = ad::mul(ad::add_const(ad::scale(ad::mul(mu1, mu2), 2.0), w.c1),
                        ad::add_const(ad::scale(s12, 2.0), w.c2));
  ad::Var den = ad::mul(ad::add_const(ad::add(ad::mul(mu1, mu1), ad::mul(mu2, mu2)), w.c1),
                        ad::add_const(ad::add(s11, s22), w.c2));
  return ad::mean_all(ad::div(num, den));
}

inline ad::Var ssim_loss(ad::Var a, ad::Var b, const LossWeights& w) {
  return ad::add_const(ad::scale(ssim_index(a, b, w), -1.0), 1.0);
}

// Histogram-contrast map: each pixel's value is the mean absolute gray-level
// distance to the rest of the image, M(v) = sum_j H(j)|j - v| over the
// normalized 256-bin histogram. The result is in gray-level units [0,255];
// it is a fixed weighting signal, not part of any gradient path.
inline Tensor histogram_saliency(const Tensor& img) {
  double hist[256] = {};
  std::vector<int> levels(img.v.size());
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    int v = static_cast<int>(std::lround(img.v[i] * 255.0));
    v = v < 0 ? 0 : (v > 255 ? 255 : v);
    levels[i] = v;
    hist[v] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(img.v.size());
  for (double& h : hist) h *= inv;

  double contrast[256];
  for (int v = 0; v < 256; ++v) {
    double acc = 0.0;
    for (int j = 0; j < 256; ++j) acc += hist[j] * std::abs(j - v);
    contrast[v] = acc;
  }
  Tensor out(img.shape);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = contrast[levels[i]];
  return out;
}

namespace loss_detail {

// Pairwise exponential normalization, computed through the stable sigmoid so
// large contrast values cannot overflow.
inline std::pair<Tensor, Tensor> softmax_pair(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "softmax_pair");
  Tensor wa(a.shape), wb(a.shape);
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    const double s = d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
    wa.v[i] = s;
    wb.v[i] = 1.0 - s;
  }
  return {std::move(wa), std::move(wb)};
}

}  // namespace loss_detail

// Per-pixel information-preservation weights for a modality pair; sums to 1
// pixel-wise by construction.
inline std::pair<Tensor, Tensor> saliency_weights(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "saliency_weights");
  return loss_detail::softmax_pair(histogram_saliency(a), histogram_saliency(b));
}

// Fusion quality loss: saliency-weighted intensity plus mu * saliency-weighted
// structure preservation.
inline ad::Var weighted_task_loss(ad::Var f, ad::Var a, ad::Var b, const Tensor& ma,
                                  const Tensor& mb, const LossWeights& w) {
  check_same_shape(f.val(), ma, "weighted_task_loss");
  check_same_shape(f.val(), mb, "weighted_task_loss");
  ad::Tape& t = *f.tape;
  ad::Var wa = ad::leaf(t, ma), wb = ad::leaf(t, mb);

  ad::Var da = ad::mul(wa, ad::sub(f, a));
  ad::Var db = ad::mul(wb, ad::sub(f, b));
  ad::Var l_int = ad::add(ad::mean_all(ad::mul(da, da)), ad::mean_all(ad::mul(db, db)));
  if (w.mu == 0.0) return l_int;

  ad::Var sa = ssim_loss(ad::mul(wa, f), ad::mul(wa, a), w);
  ad::Var sb = ssim_loss(ad::mul(wb, f), ad::mul(wb, b), w);
  return ad::add(l_int, ad::scale(ad::add(sa, sb), w.mu));
}

// --- feature-richness weighting (plain tensor side) ---

// Sobel gradient magnitude with the border replicated.
inline Tensor sobel_magnitude(const Tensor& img) {
  const int N = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  Tensor out(img.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double gx = 0.0, gy = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              // Replicate the border so flat regions read as zero gradient.
              const int iy = std::clamp(y + dy, 0, H - 1);
              const int ix = std::clamp(x + dx, 0, W - 1);
              const double v = img.at(n, c, iy, ix);
              gx += kx[dy + 1][dx + 1] * v;
              gy += ky[dy + 1][dx + 1] * v;
            }
          out.at(n, c, y, x) = std::sqrt(gx * gx + gy * gy);
        }
  return out;
}

// Box average over a window, normalizing by the in-bounds neighbor count.
inline Tensor box_average(const Tensor& img, int window) {
  const int N = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  const int r = window / 2;
  Tensor out(img.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double acc = 0.0;
          int cnt = 0;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              const int iy = y + dy, ix = x + dx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += img.at(n, c, iy, ix);
              ++cnt;
            }
          out.at(n, c, y, x) = acc / cnt;
        }
  return out;
}

// Richness proxy per source: window-averaged Sobel energy, normalized across
// the pair. Stands in for pretrained-feature activity maps at desk scale.
inline std::pair<Tensor, Tensor> feature_richness_weights(const Tensor& a, const Tensor& b,
                                                          const LossWeights& w) {
  return loss_detail::softmax_pair(box_average(sobel_magnitude(a), w.feature_window),
                                   box_average(sobel_magnitude(b), w.feature_window));
}

// Reconstruction loss with caller-supplied weight maps: weights multiply the squared
// residuals, so equal maps (0.5/0.5) recover the plain mean reconstruction.
inline ad::Var feature_richness_loss(ad::Var f, ad::Var a, ad::Var b, const Tensor& wa,
                                     const Tensor& wb) {
  check_same_shape(f.val(), wa, "feature_richness_loss");
  check_same_shape(f.val(), wb, "feature_richness_loss");
  ad::Tape& t = *f.tape;
  ad::Var va = ad::leaf(t, wa), vb = ad::leaf(t, wb);
  ad::Var da = ad::sub(f, a), db = ad::sub(f, b);
  return ad::mean_all(ad::add(ad::mul(va, ad::mul(da, da)), ad::mul(vb, ad::mul(db, db))));
}

// Reconstruction loss with weights derived from the sources themselves (the default).
inline ad::Var feature_richness_loss(ad::Var f, ad::Var a, ad::Var b, const LossWeights& w) {
  if (w.feature_weights == "external")
    throw std::invalid_argument(
        "feature_weights=external requires explicit weight maps; none were supplied");
  if (w.feature_weights != "gradient")
    throw std::invalid_argument("unknown feature_weights mode '" + w.feature_weights + "'");
  auto [wa, wb] = feature_richness_weights(a.val(), b.val(), w);
  return feature_richness_loss(f, a, b, wa, wb);
}

// Relaxed single-level objective: task loss plus eta * fusion loss.
inline ad::Var joint_objective(ad::Var task_loss, ad::Var fusion_loss, double eta) {
  if (eta < 0.0) throw std::invalid_argument("eta must be >= 0");
  if (eta == 0.0) return task_loss;
  return ad::add(task_loss, ad::scale(fusion_loss, eta));
}

}  // namespace taskfuse
