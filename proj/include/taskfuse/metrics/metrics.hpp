#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/core/tensor.hpp"

namespace taskfuse {

// Knobs for the reference-based quality metrics. Histograms are 256-bin and
// entropies are in bits. Aggregation across the two sources follows the usual
// fusion-table convention (MI sums, VIF and FMI average) but each is a flag so
// either convention can be matched.
struct MetricConfig {
  int bins = 256;
  std::string mi_aggregate = "sum";    // "sum" | "mean"
  std::string vif_aggregate = "mean";  // "mean" | "sum"
  std::string fmi_aggregate = "mean";  // "mean" | "sum"
  std::string fmi_feature = "gradient";  // "gradient" | "pixel"
  int fmi_window = 8;  // sliding-window side for local feature statistics
  int fmi_bins = 8;    // per-window quantization levels

  // Edge-preservation sigmoid constants (strength, then orientation).
  double qabf_gamma_g = 0.9994;
  double qabf_kappa_g = -15.0;
  double qabf_sigma_g = 0.5;
  double qabf_gamma_a = 0.9879;
  double qabf_kappa_a = -22.0;
  double qabf_sigma_a = 0.8;
  // The sigmoid product tops out near 0.9748 even for a perfect copy; with
  // this flag the per-pixel score is divided by that ceiling so perfect edge
  // transfer scores 1. Turn off to match the classic tables.
  bool qabf_normalize_perfect = true;

  double vif_noise_var = 2.0;  // HVS noise variance on the 0..255 scale
  int vif_scales = 4;

  void validate() const {
    auto oneof = [](const std::string& v, std::initializer_list<const char*> ok,
                    const char* what) {
      for (const char* s : ok)
        if (v == s) return;
      throw std::invalid_argument(std::string(what) + ": unknown value '" + v + "'");
    };
    oneof(mi_aggregate, {"sum", "mean"}, "mi_aggregate");
    oneof(vif_aggregate, {"mean", "sum"}, "vif_aggregate");
    oneof(fmi_aggregate, {"mean", "sum"}, "fmi_aggregate");
    oneof(fmi_feature, {"gradient", "pixel"}, "fmi_feature");
    if (bins < 2 || bins > 65536) throw std::invalid_argument("bins must be in [2, 65536]");
    if (fmi_window < 2) throw std::invalid_argument("fmi_window must be at least 2");
    if (fmi_bins < 2 || fmi_bins > 256)
      throw std::invalid_argument("fmi_bins must be in [2, 256]");
    if (vif_noise_var <= 0.0) throw std::invalid_argument("vif_noise_var must be positive");
    if (vif_scales < 1 || vif_scales > 4)
      throw std::invalid_argument("vif_scales must be in [1, 4]");
  }
};

namespace metric_detail {

// Round a [0,1] image onto the 0..255 grid (kept as doubles).
inline Tensor quantize8(const Tensor& x) {
  Tensor q(x.shape);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    long b = std::lround(x.v[i] * 255.0);
    q.v[i] = static_cast<double>(std::clamp(b, 0L, 255L));
  }
  return q;
}

inline int bin_of(double q255, int bins) {
  int b = static_cast<int>(q255 * (bins / 256.0));
  return std::clamp(b, 0, bins - 1);
}

inline std::vector<double> histogram(const Tensor& q, int bins) {
  std::vector<double> h(bins, 0.0);
  for (double v : q.v) h[bin_of(v, bins)] += 1.0;
  const double n = static_cast<double>(q.v.size());
  for (double& p : h) p /= n;
  return h;
}

inline double entropy_bits(const std::vector<double>& p) {
  double h = 0.0;
  for (double pi : p)
    if (pi > 0.0) h -= pi * std::log2(pi);
  return h;
}

inline double mutual_information_bits(const Tensor& qx, const Tensor& qy, int bins) {
  check_same_shape(qx, qy, "mutual_information");
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
  for (std::size_t i = 0; i < qx.v.size(); ++i)
    joint[static_cast<std::size_t>(bin_of(qx.v[i], bins)) * bins + bin_of(qy.v[i], bins)] += 1.0;
  const double n = static_cast<double>(qx.v.size());
  for (double& c : joint) c /= n;
  std::vector<double> px(bins, 0.0), py(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      px[i] += joint[static_cast<std::size_t>(i) * bins + j];
      py[j] += joint[static_cast<std::size_t>(i) * bins + j];
    }
  double info = 0.0;
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      const double pij = joint[static_cast<std::size_t>(i) * bins + j];
      if (pij > 0.0) info += pij * std::log2(pij / (px[i] * py[j]));
    }
  return std::max(info, 0.0);  // exact value is nonnegative; guard rounding
}

// 3x3 Sobel pair with replicated borders, so flat regions read as zero.
inline void sobel_xy(const Tensor& img, Tensor& gx, Tensor& gy) {
  static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const double ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const int N = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
  gx = Tensor(img.shape);
  gy = Tensor(img.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double sx = 0.0, sy = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int iy = std::clamp(y + dy, 0, H - 1);
              const int ix = std::clamp(x + dx, 0, W - 1);
              const double v = img.at(n, c, iy, ix);
              sx += kx[dy + 1][dx + 1] * v;
              sy += ky[dy + 1][dx + 1] * v;
            }
          gx.at(n, c, y, x) = sx;
          gy.at(n, c, y, x) = sy;
        }
}

inline Tensor sobel_mag(const Tensor& img) {
  Tensor gx, gy, out(img.shape);
  sobel_xy(img, gx, gy);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::hypot(gx.v[i], gy.v[i]);
  return out;
}

// Pearson correlation; a zero-variance argument contributes 0 by convention.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct Plane {
  int H = 0, W = 0;
  std::vector<double> v;
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * W + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * W + x]; }
};

inline std::vector<double> gauss_kernel(int n, double sigma) {
  std::vector<double> k(n);
  const double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& w : k) w /= sum;
  return k;
}

// Separable same-size Gaussian blur with replicated borders.
inline Plane gauss_filter(const Plane& p, int n, double sigma) {
  const std::vector<double> k = gauss_kernel(n, sigma);
  const int r = n / 2;
  Plane tmp{p.H, p.W, std::vector<double>(p.v.size())};
  for (int y = 0; y < p.H; ++y)
    for (int x = 0; x < p.W; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * p.at(y, std::clamp(x + i, 0, p.W - 1));
      tmp.at(y, x) = s;
    }
  Plane out{p.H, p.W, std::vector<double>(p.v.size())};
  for (int y = 0; y < p.H; ++y)
    for (int x = 0; x < p.W; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(std::clamp(y + i, 0, p.H - 1), x);
      out.at(y, x) = s;
    }
  return out;
}

inline Plane decimate2(const Plane& p) {
  Plane out{(p.H + 1) / 2, (p.W + 1) / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.H) * out.W);
  for (int y = 0; y < out.H; ++y)
    for (int x = 0; x < out.W; ++x) out.at(y, x) = p.at(2 * y, 2 * x);
  return out;
}

// Pixel-domain visual-information ratio for one reference/distorted plane
// pair, accumulated over a Gaussian pyramid.
inline void vif_accumulate(Plane ref, Plane dist, const MetricConfig& cfg, double& num,
                           double& den) {
  for (int scale = 1; scale <= cfg.vif_scales; ++scale) {
    const int n = (1 << (cfg.vif_scales - scale + 1)) + 1;
    const double sigma = n / 5.0;
    if (scale > 1) {
      ref = decimate2(gauss_filter(ref, n, sigma));
      dist = decimate2(gauss_filter(dist, n, sigma));
    }
    Plane mu1 = gauss_filter(ref, n, sigma), mu2 = gauss_filter(dist, n, sigma);
    Plane rr = ref, dd = dist, rd = ref;
    for (std::size_t i = 0; i < rr.v.size(); ++i) {
      rr.v[i] = ref.v[i] * ref.v[i];
      dd.v[i] = dist.v[i] * dist.v[i];
      rd.v[i] = ref.v[i] * dist.v[i];
    }
    Plane s1 = gauss_filter(rr, n, sigma), s2 = gauss_filter(dd, n, sigma),
          s12 = gauss_filter(rd, n, sigma);
    for (std::size_t i = 0; i < s1.v.size(); ++i) {
      double v1 = std::max(s1.v[i] - mu1.v[i] * mu1.v[i], 0.0);
      double v2 = std::max(s2.v[i] - mu2.v[i] * mu2.v[i], 0.0);
      const double c12 = s12.v[i] - mu1.v[i] * mu2.v[i];
      double g = c12 / (v1 + 1e-10);
      double sv = v2 - g * c12;
      if (v1 < 1e-10) {
        g = 0.0;
        sv = v2;
        v1 = 0.0;
      }
      if (v2 < 1e-10) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = v2;
        g = 0.0;
      }
      sv = std::max(sv, 1e-10);
      num += std::log2(1.0 + g * g * v1 / (sv + cfg.vif_noise_var));
      den += std::log2(1.0 + v1 / cfg.vif_noise_var);
    }
  }
}

inline std::vector<Plane> planes_of(const Tensor& q) {
  const int N = q.dim(0), C = q.dim(1), H = q.dim(2), W = q.dim(3);
  std::vector<Plane> out;
  out.reserve(static_cast<std::size_t>(N) * C);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      Plane p{H, W, {}};
      p.v.assign(q.v.begin() + (static_cast<std::size_t>(n) * C + c) * H * W,
                 q.v.begin() + (static_cast<std::size_t>(n) * C + c + 1) * H * W);
      out.push_back(std::move(p));
    }
  return out;
}

inline double vif_pair(const Tensor& ref, const Tensor& dist, const MetricConfig& cfg) {
  double num = 0.0, den = 0.0;
  const std::vector<Plane> rp = planes_of(ref), dp = planes_of(dist);
  for (std::size_t i = 0; i < rp.size(); ++i) vif_accumulate(rp[i], dp[i], cfg, num, den);
  return den > 0.0 ? num / den : 0.0;
}

inline Tensor feature_map(const Tensor& img, const MetricConfig& cfg) {
  const Tensor q = quantize8(img);
  return cfg.fmi_feature == "pixel" ? q : sobel_mag(q);
}

// Quantize one window by its own min-max range; a flat window maps to all
// zeros (and is recognized as carrying no information downstream).
inline void window_levels(const Plane& p, int y0, int x0, int w, int bins,
                          std::vector<int>& out) {
  out.clear();
  double lo = p.at(y0, x0), hi = lo;
  for (int y = 0; y < w; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = p.at(y0 + y, x0 + x);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  for (int y = 0; y < w; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = p.at(y0 + y, x0 + x);
      int b = hi > lo ? static_cast<int>((v - lo) / (hi - lo) * bins) : 0;
      out.push_back(std::clamp(b, 0, bins - 1));
    }
}

// Mean over sliding windows of 2*I/(H1+H2) between locally quantized feature
// windows. Windows where both sides are flat carry no evidence and are
// skipped; a fully flat pair scores 0.
inline double windowed_nmi(const Tensor& fx, const Tensor& fy, const MetricConfig& cfg) {
  const std::vector<Plane> px = planes_of(fx), py = planes_of(fy);
  const int w = cfg.fmi_window, bins = cfg.fmi_bins;
  std::vector<int> lx, ly;
  std::vector<double> jointc(static_cast<std::size_t>(bins) * bins);
  std::vector<double> hx(bins), hy(bins);
  double acc = 0.0;
  long count = 0;
  for (std::size_t pl = 0; pl < px.size(); ++pl) {
    const Plane& a = px[pl];
    const Plane& b = py[pl];
    for (int y0 = 0; y0 + w <= a.H; ++y0)
      for (int x0 = 0; x0 + w <= a.W; ++x0) {
        window_levels(a, y0, x0, w, bins, lx);
        window_levels(b, y0, x0, w, bins, ly);
        std::fill(jointc.begin(), jointc.end(), 0.0);
        std::fill(hx.begin(), hx.end(), 0.0);
        std::fill(hy.begin(), hy.end(), 0.0);
        const double n = static_cast<double>(lx.size());
        for (std::size_t i = 0; i < lx.size(); ++i) {
          jointc[static_cast<std::size_t>(lx[i]) * bins + ly[i]] += 1.0;
          hx[lx[i]] += 1.0;
          hy[ly[i]] += 1.0;
        }
        double ex = 0.0, ey = 0.0, info = 0.0;
        for (int i = 0; i < bins; ++i) {
          if (hx[i] > 0.0) ex -= hx[i] / n * std::log2(hx[i] / n);
          if (hy[i] > 0.0) ey -= hy[i] / n * std::log2(hy[i] / n);
        }
        if (ex + ey <= 0.0) continue;
        for (int i = 0; i < bins; ++i)
          for (int j = 0; j < bins; ++j) {
            const double pij = jointc[static_cast<std::size_t>(i) * bins + j] / n;
            if (pij > 0.0) info += pij * std::log2(pij / (hx[i] / n * (hy[j] / n)));
          }
        acc += 2.0 * std::max(info, 0.0) / (ex + ey);
        ++count;
      }
  }
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

inline double combine2(double a, double b, const std::string& how) {
  return how == "sum" ? a + b : 0.5 * (a + b);
}

}  // namespace metric_detail

// Shannon entropy of the 8-bit histogram, in bits.
inline double en(const Tensor& f, const MetricConfig& cfg = {}) {
  cfg.validate();
  return metric_detail::entropy_bits(
      metric_detail::histogram(metric_detail::quantize8(f), cfg.bins));
}

// Histogram mutual information carried from each source into the fused image.
inline double mi(const Tensor& f, const Tensor& a, const Tensor& b,
                 const MetricConfig& cfg = {}) {
  cfg.validate();
  check_same_shape(f, a, "mi");
  check_same_shape(f, b, "mi");
  const Tensor qf = metric_detail::quantize8(f);
  const double ia = metric_detail::mutual_information_bits(qf, metric_detail::quantize8(a), cfg.bins);
  const double ib = metric_detail::mutual_information_bits(qf, metric_detail::quantize8(b), cfg.bins);
  return metric_detail::combine2(ia, ib, cfg.mi_aggregate);
}

// Sum of correlations between each source and the fused image minus the other
// source. Zero-variance arguments contribute 0.
inline double scd(const Tensor& f, const Tensor& a, const Tensor& b,
                  const MetricConfig& cfg = {}) {
  cfg.validate();
  check_same_shape(f, a, "scd");
  check_same_shape(f, b, "scd");
  const Tensor qf = metric_detail::quantize8(f);
  const Tensor qa = metric_detail::quantize8(a);
  const Tensor qb = metric_detail::quantize8(b);
  std::vector<double> fa(qf.v.size()), fb(qf.v.size());
  for (std::size_t i = 0; i < qf.v.size(); ++i) {
    fa[i] = qf.v[i] - qb.v[i];  // what F adds beyond B, compared against A
    fb[i] = qf.v[i] - qa.v[i];
  }
  return metric_detail::pearson(fa, qa.v) + metric_detail::pearson(fb, qb.v);
}

// Edge-preservation score: how much source gradient strength and orientation
// survives in the fused image, weighted by source edge strength.
inline double qabf(const Tensor& f, const Tensor& a, const Tensor& b,
                   const MetricConfig& cfg = {}) {
  cfg.validate();
  check_same_shape(f, a, "qabf");
  check_same_shape(f, b, "qabf");
  using namespace metric_detail;
  Tensor gxf, gyf, gxa, gya, gxb, gyb;
  sobel_xy(quantize8(f), gxf, gyf);
  sobel_xy(quantize8(a), gxa, gya);
  sobel_xy(quantize8(b), gxb, gyb);
  const double half_pi = std::numbers::pi / 2.0;
  auto strength = [](double gx, double gy) { return std::hypot(gx, gy); };
  auto angle = [&](double gx, double gy) { return gx == 0.0 ? half_pi : std::atan(gy / gx); };
  auto qg = [&](double g) {
    return cfg.qabf_gamma_g / (1.0 + std::exp(cfg.qabf_kappa_g * (g - cfg.qabf_sigma_g)));
  };
  auto qa = [&](double al) {
    return cfg.qabf_gamma_a / (1.0 + std::exp(cfg.qabf_kappa_a * (al - cfg.qabf_sigma_a)));
  };
  const double perfect = qg(1.0) * qa(1.0);
  auto edge_quality = [&](double gs, double as, double gf, double af) {
    double ratio;
    if (gs > gf)
      ratio = gf / gs;
    else if (gf > gs)
      ratio = gs / gf;
    else
      ratio = gs == 0.0 ? 0.0 : 1.0;
    const double align = 1.0 - std::abs(as - af) / half_pi;
    double q = qg(ratio) * qa(align);
    if (cfg.qabf_normalize_perfect) q /= perfect;
    return q;
  };
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < gxf.v.size(); ++i) {
    const double gf = strength(gxf.v[i], gyf.v[i]), af = angle(gxf.v[i], gyf.v[i]);
    const double ga = strength(gxa.v[i], gya.v[i]), aa = angle(gxa.v[i], gya.v[i]);
    const double gb = strength(gxb.v[i], gyb.v[i]), ab = angle(gxb.v[i], gyb.v[i]);
    num += edge_quality(ga, aa, gf, af) * ga + edge_quality(gb, ab, gf, af) * gb;
    den += ga + gb;
  }
  return den > 0.0 ? num / den : 0.0;
}

// Visual information fidelity of the fused image against each source,
// averaged (pixel domain, Gaussian pyramid).
inline double vif(const Tensor& f, const Tensor& a, const Tensor& b,
                  const MetricConfig& cfg = {}) {
  cfg.validate();
  check_same_shape(f, a, "vif");
  check_same_shape(f, b, "vif");
  if (std::min(f.dim(2), f.dim(3)) < 32)
    throw std::invalid_argument("vif requires min spatial dimension >= 32");
  const Tensor qf = metric_detail::quantize8(f);
  const double va = metric_detail::vif_pair(metric_detail::quantize8(a), qf, cfg);
  const double vb = metric_detail::vif_pair(metric_detail::quantize8(b), qf, cfg);
  return metric_detail::combine2(va, vb, cfg.vif_aggregate);
}

// Mutual information between feature maps (gradient magnitude by default),
// normalized per source pair: mean over sliding windows of 2I/(H1+H2).
inline double fmi(const Tensor& f, const Tensor& a, const Tensor& b,
                  const MetricConfig& cfg = {}) {
  cfg.validate();
  check_same_shape(f, a, "fmi");
  check_same_shape(f, b, "fmi");
  if (std::min(f.dim(2), f.dim(3)) < cfg.fmi_window)
    throw std::invalid_argument("fmi requires min spatial dimension >= fmi_window");
  const Tensor ff = metric_detail::feature_map(f, cfg);
  const double na = metric_detail::windowed_nmi(ff, metric_detail::feature_map(a, cfg), cfg);
  const double nb = metric_detail::windowed_nmi(ff, metric_detail::feature_map(b, cfg), cfg);
  return metric_detail::combine2(na, nb, cfg.fmi_aggregate);
}

struct PairMetrics {
  std::string pair_id;
  double mi = 0.0, fmi = 0.0, vif = 0.0, qabf = 0.0, en = 0.0, scd = 0.0;
};

inline PairMetrics evaluate_pair(const std::string& pair_id, const Tensor& f, const Tensor& a,
                                 const Tensor& b, const MetricConfig& cfg = {}) {
  PairMetrics m;
  m.pair_id = pair_id;
  m.mi = mi(f, a, b, cfg);
  m.fmi = fmi(f, a, b, cfg);
  m.vif = vif(f, a, b, cfg);
  m.qabf = qabf(f, a, b, cfg);
  m.en = en(f, cfg);
  m.scd = scd(f, a, b, cfg);
  return m;
}

// Per-pair metric table plus model accounting, as consumed by report output.
struct MetricReport {
  std::vector<PairMetrics> pairs;
  std::size_t parameter_count = 0;
  double latency_estimate = 0.0;  // expected-operator-cost units
  double fuse_seconds = 0.0;      // wall clock spent producing fused outputs
};

enum class MetricField { MI, FMI, VIF, Qabf, EN, SCD };

inline double metric_value(const PairMetrics& m, MetricField f) {
  switch (f) {
    case MetricField::MI: return m.mi;
    case MetricField::FMI: return m.fmi;
    case MetricField::VIF: return m.vif;
    case MetricField::Qabf: return m.qabf;
    case MetricField::EN: return m.en;
    case MetricField::SCD: return m.scd;
  }
  throw std::invalid_argument("unknown metric field");
}

inline const char* metric_name(MetricField f) {
  switch (f) {
    case MetricField::MI: return "MI";
    case MetricField::FMI: return "FMI";
    case MetricField::VIF: return "VIF";
    case MetricField::Qabf: return "Qabf";
    case MetricField::EN: return "EN";
    case MetricField::SCD: return "SCD";
  }
  throw std::invalid_argument("unknown metric field");
}

inline double aggregate_mean(const MetricReport& r, MetricField f) {
  if (r.pairs.empty()) throw std::invalid_argument("no pairs to aggregate");
  double s = 0.0;
  for (const PairMetrics& m : r.pairs) s += metric_value(m, f);
  return s / static_cast<double>(r.pairs.size());
}

inline double aggregate_median(const MetricReport& r, MetricField f) {
  if (r.pairs.empty()) throw std::invalid_argument("no pairs to aggregate");
  std::vector<double> v;
  v.reserve(r.pairs.size());
  for (const PairMetrics& m : r.pairs) v.push_back(metric_value(m, f));
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace taskfuse
