#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "taskfuse/core/rng.hpp"
#include "taskfuse/core/tensor.hpp"
#include "taskfuse/metrics/metrics.hpp"

using namespace taskfuse;

namespace {

Tensor noise_img(Rng& rng, int h, int w) {
  Tensor t({1, 1, h, w});
  for (double& v : t.v) v = rng.uniform();
  return t;
}

// Smooth stationary texture: a few random sinusoids plus mild noise.
Tensor scene(Rng& rng, int h, int w) {
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 4; ++k)
    waves.push_back({rng.uniform(0.03, 0.17), rng.uniform(0.03, 0.17),
                     rng.uniform(0.0, 6.28318), rng.uniform(0.05, 0.12)});
  Tensor t({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = 0.5;
      for (const Wave& wv : waves)
        v += wv.amp * std::sin(6.28318530717958647 * (wv.fx * x + wv.fy * y) + wv.phase);
      v += 0.03 * (rng.uniform() - 0.5);
      t.at(0, 0, y, x) = std::clamp(v, 0.02, 0.98);
    }
  return t;
}

// Short-correlation texture with a coarse level set: blurred white noise
// posterized to 12 levels. Its histograms stay well sampled, so the
// histogram-based metrics are statistically stable under cropping.
Tensor texture(Rng& rng, int h, int w) {
  Tensor raw({1, 1, h, w});
  for (double& v : raw.v) v = rng.uniform();
  Tensor t({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          s += raw.at(0, 0, std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
      const double lvl = std::floor(s / 9.0 * 12.0);
      t.at(0, 0, y, x) = 0.1 + 0.8 * std::clamp(lvl, 0.0, 11.0) / 11.0;
    }
  return t;
}

Tensor crop_border(const Tensor& t, int m) {
  const int h = t.dim(2) - 2 * m, w = t.dim(3) - 2 * m;
  Tensor out({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(0, 0, y, x) = t.at(0, 0, y + m, x + m);
  return out;
}

double entropy_oracle(const Tensor& img) {
  std::vector<double> count(256, 0.0);
  for (double v : img.v) {
    long b = std::clamp(std::lround(v * 255.0), 0L, 255L);
    count[static_cast<std::size_t>(b)] += 1.0;
  }
  double h = 0.0;
  const double n = static_cast<double>(img.v.size());
  for (double c : count)
    if (c > 0.0) h -= (c / n) * std::log2(c / n);
  return h;
}

}  // namespace

TEST_CASE("entropy matches its histogram definition to machine precision") {
  Rng rng(301);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor x = noise_img(rng, 24, 24);
    REQUIRE(en(x) == Catch::Approx(entropy_oracle(x)).margin(1e-12));
  }
  REQUIRE(en(Tensor::full({1, 1, 9, 9}, 0.4)) == 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double e = en(noise_img(rng, 16, 16));
    REQUIRE(e >= 0.0);
    REQUIRE(e <= 8.0);
  }
}

TEST_CASE("self mutual information doubles the entropy") {
  Rng rng(302);
  Tensor x = scene(rng, 40, 40);
  REQUIRE(mi(x, x, x) == Catch::Approx(2.0 * en(x)).margin(1e-9));

  MetricConfig avg;
  avg.mi_aggregate = "mean";
  REQUIRE(mi(x, x, x, avg) == Catch::Approx(en(x)).margin(1e-9));
}

TEST_CASE("mutual information is symmetric between its two images") {
  Rng rng(303);
  Tensor a = metric_detail::quantize8(scene(rng, 32, 32));
  Tensor b = metric_detail::quantize8(scene(rng, 32, 32));
  const double ab = metric_detail::mutual_information_bits(a, b, 256);
  const double ba = metric_detail::mutual_information_bits(b, a, 256);
  REQUIRE(ab == Catch::Approx(ba).margin(1e-12));
  REQUIRE(ab >= 0.0);
}

TEST_CASE("independent noise shows vanishing mutual information") {
  // A coarse 16-level alphabet keeps the plug-in estimator's small-sample
  // bias (~(K-1)^2 / 2N ln 2) far below the tolerance at this size.
  Rng rng(304);
  Tensor x({1, 1, 256, 256}), y({1, 1, 256, 256});
  for (double& v : x.v) v = static_cast<double>(rng.below(16)) / 15.0;
  for (double& v : y.v) v = static_cast<double>(rng.below(16)) / 15.0;
  const double info = metric_detail::mutual_information_bits(
      metric_detail::quantize8(x), metric_detail::quantize8(y), 256);
  REQUIRE(info >= 0.0);
  REQUIRE(info < 0.05);
}

TEST_CASE("difference correlations recover an additive composition") {
  Rng rng(305);
  Tensor a({1, 1, 64, 64}), b({1, 1, 64, 64}), f({1, 1, 64, 64});
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    a.v[i] = 0.5 + 0.2 * (2.0 * rng.uniform() - 1.0);
    b.v[i] = 0.5 + 0.2 * (2.0 * rng.uniform() - 1.0);
    f.v[i] = a.v[i] + b.v[i] - 0.5;  // stays inside [0.1, 0.9]
  }
  REQUIRE(scd(f, a, b) == Catch::Approx(2.0).margin(0.05));
}

TEST_CASE("zero-variance inputs contribute zero correlation") {
  Rng rng(306);
  Tensor flat = Tensor::full({1, 1, 16, 16}, 0.5);
  Tensor x = noise_img(rng, 16, 16);
  REQUIRE(scd(flat, flat, flat) == 0.0);
  REQUIRE(scd(x, flat, flat) == 0.0);
}

TEST_CASE("perfect edge transfer scores one") {
  Rng rng(307);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor a = scene(rng, 48, 48);
    const double q = qabf(a, a, a);
    REQUIRE(q == 1.0);
    REQUIRE(q >= 0.98);

    MetricConfig classic;
    classic.qabf_normalize_perfect = false;
    const double qc = qabf(a, a, a, classic);
    // The raw sigmoid product caps a perfect copy just below 0.98.
    REQUIRE(qc > 0.97);
    REQUIRE(qc < 0.98);
  }
  Tensor flat = Tensor::full({1, 1, 16, 16}, 0.3);
  REQUIRE(qabf(flat, flat, flat) == 0.0);
}

TEST_CASE("edge preservation stays within the unit interval") {
  Rng rng(308);
  MetricConfig classic;
  classic.qabf_normalize_perfect = false;
  for (int trial = 0; trial < 10000; ++trial) {
    Tensor f = noise_img(rng, 8, 8), a = noise_img(rng, 8, 8), b = noise_img(rng, 8, 8);
    const double q = trial % 2 ? qabf(f, a, b, classic) : qabf(f, a, b);
    REQUIRE(q >= 0.0);
    REQUIRE(q <= 1.0);
  }
}

TEST_CASE("identical images carry full visual information") {
  Rng rng(309);
  Tensor x = scene(rng, 64, 64);
  REQUIRE(vif(x, x, x) == Catch::Approx(1.0).margin(1e-6));

  MetricConfig summed;
  summed.vif_aggregate = "sum";
  REQUIRE(vif(x, x, x, summed) == Catch::Approx(2.0 * vif(x, x, x)).margin(1e-12));

  Tensor tiny = scene(rng, 31, 40);
  REQUIRE_THROWS_AS(vif(tiny, tiny, tiny), std::invalid_argument);
}

TEST_CASE("identical feature maps are fully informative") {
  Rng rng(310);
  Tensor x = scene(rng, 48, 48);
  REQUIRE(fmi(x, x, x) == Catch::Approx(1.0).margin(1e-9));

  MetricConfig pix;
  pix.fmi_feature = "pixel";
  REQUIRE(fmi(x, x, x, pix) == Catch::Approx(1.0).margin(1e-9));

  MetricConfig summed;
  summed.fmi_aggregate = "sum";
  REQUIRE(fmi(x, x, x, summed) == Catch::Approx(2.0 * fmi(x, x, x)).margin(1e-12));

  Tensor flat = Tensor::full({1, 1, 16, 16}, 0.7);
  REQUIRE(fmi(flat, flat, flat) == 0.0);

  Tensor narrow = Tensor::full({1, 1, 7, 40}, 0.5);
  REQUIRE_THROWS_AS(fmi(narrow, narrow, narrow), std::invalid_argument);
}

TEST_CASE("metrics shrug off a uniform border crop") {
  Rng rng(311);
  Tensor a = texture(rng, 96, 96), b = texture(rng, 96, 96), f({1, 1, 96, 96});
  for (std::size_t i = 0; i < f.v.size(); ++i) f.v[i] = 0.6 * a.v[i] + 0.4 * b.v[i];
  Tensor fc = crop_border(f, 4), ac = crop_border(a, 4), bc = crop_border(b, 4);

  auto rel_close = [](double full, double cropped) {
    return std::abs(full - cropped) <= 0.02 * std::abs(full);
  };
  REQUIRE(rel_close(mi(f, a, b), mi(fc, ac, bc)));
  REQUIRE(rel_close(fmi(f, a, b), fmi(fc, ac, bc)));
  REQUIRE(rel_close(vif(f, a, b), vif(fc, ac, bc)));
  REQUIRE(rel_close(qabf(f, a, b), qabf(fc, ac, bc)));
  REQUIRE(rel_close(en(f), en(fc)));
  REQUIRE(rel_close(scd(f, a, b), scd(fc, ac, bc)));
}

TEST_CASE("evaluating a pair matches the individual metrics") {
  Rng rng(312);
  Tensor a = scene(rng, 64, 64), b = scene(rng, 64, 64), f({1, 1, 64, 64});
  for (std::size_t i = 0; i < f.v.size(); ++i) f.v[i] = 0.5 * (a.v[i] + b.v[i]);
  PairMetrics m = evaluate_pair("p0", f, a, b);
  REQUIRE(m.pair_id == "p0");
  REQUIRE(m.mi == mi(f, a, b));
  REQUIRE(m.fmi == fmi(f, a, b));
  REQUIRE(m.vif == vif(f, a, b));
  REQUIRE(m.qabf == qabf(f, a, b));
  REQUIRE(m.en == en(f));
  REQUIRE(m.scd == scd(f, a, b));
}

TEST_CASE("report aggregation yields means and medians") {
  MetricReport r;
  r.pairs.push_back({"a", 1.0, 0.1, 0.2, 0.3, 4.0, 0.5});
  r.pairs.push_back({"b", 3.0, 0.2, 0.4, 0.6, 5.0, 1.5});
  r.pairs.push_back({"c", 8.0, 0.6, 0.6, 0.9, 6.0, 1.0});
  REQUIRE(aggregate_mean(r, MetricField::MI) == Catch::Approx(4.0));
  REQUIRE(aggregate_median(r, MetricField::MI) == Catch::Approx(3.0));
  REQUIRE(aggregate_median(r, MetricField::SCD) == Catch::Approx(1.0));

  r.pairs.pop_back();
  REQUIRE(aggregate_median(r, MetricField::EN) == Catch::Approx(4.5));

  MetricReport empty;
  REQUIRE_THROWS_AS(aggregate_mean(empty, MetricField::MI), std::invalid_argument);
  REQUIRE_THROWS_AS(aggregate_median(empty, MetricField::MI), std::invalid_argument);
  REQUIRE(std::string(metric_name(MetricField::Qabf)) == "Qabf");
}

TEST_CASE("metric configuration rejects unknown settings") {
  Tensor x = Tensor::full({1, 1, 8, 8}, 0.5);
  MetricConfig bad;
  bad.mi_aggregate = "max";
  REQUIRE_THROWS_AS(mi(x, x, x, bad), std::invalid_argument);
  bad = {};
  bad.fmi_feature = "wavelet";
  REQUIRE_THROWS_AS(fmi(x, x, x, bad), std::invalid_argument);
  bad = {};
  bad.bins = 1;
  REQUIRE_THROWS_AS(en(x, bad), std::invalid_argument);
  bad = {};
  bad.vif_noise_var = 0.0;
  REQUIRE_THROWS_AS(scd(x, x, x, bad), std::invalid_argument);
  bad = {};
  bad.fmi_window = 1;
  REQUIRE_THROWS_AS(fmi(x, x, x, bad), std::invalid_argument);
  bad = {};
  bad.fmi_bins = 300;
  REQUIRE_THROWS_AS(fmi(x, x, x, bad), std::invalid_argument);
  bad = {};
  bad.vif_scales = 5;
  REQUIRE_THROWS_AS(qabf(x, x, x, bad), std::invalid_argument);
}

TEST_CASE("metric shape mismatches are rejected") {
  Tensor x = Tensor::full({1, 1, 40, 40}, 0.5);
  Tensor y = Tensor::full({1, 1, 40, 32}, 0.5);
  REQUIRE_THROWS_AS(mi(x, y, x), std::invalid_argument);
  REQUIRE_THROWS_AS(scd(x, x, y), std::invalid_argument);
  REQUIRE_THROWS_AS(qabf(y, x, x), std::invalid_argument);
  REQUIRE_THROWS_AS(vif(x, y, x), std::invalid_argument);
  REQUIRE_THROWS_AS(fmi(x, x, y), std::invalid_argument);
}
