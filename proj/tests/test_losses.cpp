#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "support/finite_diff.hpp"
#include "support/oracles.hpp"
#include "taskfuse/core/rng.hpp"
#include "taskfuse/loss/losses.hpp"

using namespace taskfuse;
namespace tt = taskfuse::test;

namespace {

Tensor img8(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return Tensor::uniform({1, 1, 8, 8}, rng, lo, hi);
}

LossWeights small_window() {
  LossWeights w;
  w.ssim_window = 5;
  return w;
}

double scalar_of(const std::function<ad::Var(ad::Tape&)>& build) {
  ad::Tape t;
  return build(t).val().item();
}

}  // namespace

TEST_CASE("intensity loss matches hand values") {
  ad::Tape t;
  Tensor x({1, 1, 2, 1}, {0.0, 0.5});
  Tensor y({1, 1, 2, 1}, {0.5, 0.5});
  REQUIRE(intensity_loss(ad::leaf(t, x), ad::leaf(t, x)).val().item() == 0.0);
  REQUIRE(intensity_loss(ad::leaf(t, Tensor::zeros({1, 1, 2, 2})),
                         ad::leaf(t, Tensor::full({1, 1, 2, 2}, 1.0)))
              .val()
              .item() == 1.0);
  REQUIRE(intensity_loss(ad::leaf(t, x), ad::leaf(t, y)).val().item() == Catch::Approx(0.125));
}

TEST_CASE("ssim of an image with itself is exactly one") {
  Rng rng(31);
  const Tensor x = img8(rng);
  const double s = scalar_of([&](ad::Tape& t) { return ssim_index(ad::leaf(t, x), ad::leaf(t, x), small_window()); });
  REQUIRE(s == 1.0);
  const double l = scalar_of([&](ad::Tape& t) { return ssim_loss(ad::leaf(t, x), ad::leaf(t, x), small_window()); });
  REQUIRE(l == 0.0);
}

TEST_CASE("ssim approaches one for a vanishing constant offset") {
  Tensor a = Tensor::full({1, 1, 8, 8}, 0.5);
  Tensor b = a;
  for (auto& v : b.v) v += 1e-4;
  const double s = scalar_of([&](ad::Tape& t) { return ssim_index(ad::leaf(t, a), ad::leaf(t, b), small_window()); });
  REQUIRE(s == Catch::Approx(1.0).margin(1e-4));
  REQUIRE(s < 1.0);
}

TEST_CASE("ssim agrees with an independent sliding-window reference") {
  Rng rng(32);
  LossWeights w = small_window();
  Tensor ramp({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(0, 0, y, x) = (y * 8 + x) / 63.0;
  const Tensor noise = img8(rng);
  Tensor inverted = noise;
  for (auto& v : inverted.v) v = 1.0 - v;

  const std::pair<Tensor, Tensor> cases[] = {{noise, ramp}, {ramp, inverted}, {noise, inverted}};
  for (const auto& [a, b] : cases) {
    const double got =
        scalar_of([&](ad::Tape& t) { return ssim_index(ad::leaf(t, a), ad::leaf(t, b), w); });
    const double want = tt::ssim_reference(a, b, w.ssim_window, w.ssim_sigma, w.c1, w.c2);
    REQUIRE(got == Catch::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("ssim of an image against its negative drives the loss above one") {
  Rng rng(33);
  Tensor x = img8(rng);
  // push toward the extremes so local covariance is strongly negative
  for (auto& v : x.v) v = v < 0.5 ? 0.05 * v : 1.0 - 0.05 * (1.0 - v);
  Tensor inv = x;
  for (auto& v : inv.v) v = 1.0 - v;
  const double l = scalar_of(
      [&](ad::Tape& t) { return ssim_loss(ad::leaf(t, x), ad::leaf(t, inv), small_window()); });
  REQUIRE(l > 1.0);
}

TEST_CASE("ssim gradients match finite differences") {
  Rng rng(34);
  std::vector<Tensor> in = {img8(rng), img8(rng)};
  LossWeights w = small_window();
  auto rep = tt::check_gradients(in, [w](ad::Tape& t, std::vector<ad::Var>& x) {
    return ssim_loss(x[0], x[1], w);
  });
  INFO("analytic=" << rep.analytic << " numeric=" << rep.numeric);
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("histogram saliency: constant image maps to zero") {
  Tensor c = Tensor::full({1, 1, 4, 4}, 0.25);
  Tensor m = histogram_saliency(c);
  for (double v : m.v) REQUIRE(v == 0.0);
}

TEST_CASE("histogram saliency: balanced two-level image maps to half range") {
  Tensor x({1, 1, 2, 2}, {0.0, 0.0, 1.0, 1.0});
  Tensor m = histogram_saliency(x);
  for (double v : m.v) REQUIRE(v == Catch::Approx(127.5));
}

TEST_CASE("histogram saliency matches the brute-force oracle exactly") {
  Rng rng(35);
  for (int k = 0; k < 10; ++k) {
    Tensor x({1, 1, 8, 8});
    for (auto& v : x.v) v = static_cast<double>(rng.below(256)) / 255.0;
    Tensor fast = histogram_saliency(x);
    Tensor slow = tt::brute_force_saliency(x);
    for (std::size_t i = 0; i < fast.v.size(); ++i) REQUIRE(fast.v[i] == slow.v[i]);
  }
}

TEST_CASE("saliency weights sum to one and resolve contrast differences") {
  Rng rng(36);
  Tensor a = img8(rng);
  Tensor b = Tensor::full({1, 1, 8, 8}, 0.5);
  auto [ma, mb] = saliency_weights(a, b);
  for (std::size_t i = 0; i < ma.v.size(); ++i) {
    REQUIRE(ma.v[i] >= 0.0);
    REQUIRE(ma.v[i] <= 1.0);
    REQUIRE(ma.v[i] + mb.v[i] == Catch::Approx(1.0).margin(1e-6));
  }
  // flat source gets zero contrast, textured one positive -> weight above half
  bool a_dominates_somewhere = false;
  for (double v : ma.v) a_dominates_somewhere = a_dominates_somewhere || v > 0.5;
  REQUIRE(a_dominates_somewhere);

  auto [ca, cb] = saliency_weights(b, b);
  for (std::size_t i = 0; i < ca.v.size(); ++i) REQUIRE(ca.v[i] == Catch::Approx(0.5));
}

TEST_CASE("pairwise normalization is shift invariant and saturates in the limit") {
  Tensor c = Tensor::full({1, 1, 2, 2}, 7.0);
  auto [wa, wb] = loss_detail::softmax_pair(c, c);
  for (double v : wa.v) REQUIRE(v == Catch::Approx(0.5));

  Tensor hi = Tensor::full({1, 1, 2, 2}, 307.0);
  auto [sa, sb] = loss_detail::softmax_pair(hi, c);
  for (std::size_t i = 0; i < sa.v.size(); ++i) {
    REQUIRE(sa.v[i] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(sb.v[i] == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("weighted task loss vanishes on identical images and honors mu") {
  Rng rng(37);
  Tensor x = img8(rng);
  auto [ma, mb] = saliency_weights(x, x);
  LossWeights w = small_window();
  const double zero = scalar_of([&](ad::Tape& t) {
    return weighted_task_loss(ad::leaf(t, x), ad::leaf(t, x), ad::leaf(t, x), ma, mb, w);
  });
  REQUIRE(zero == 0.0);

  Tensor f = img8(rng), a = img8(rng), b = img8(rng);
  auto [wa, wb] = saliency_weights(a, b);
  LossWeights mu0 = w;
  mu0.mu = 0.0;
  const double got = scalar_of([&](ad::Tape& t) {
    return weighted_task_loss(ad::leaf(t, f), ad::leaf(t, a), ad::leaf(t, b), wa, wb, mu0);
  });
  const double want = scalar_of([&](ad::Tape& t) {
    ad::Var da = ad::mul(ad::leaf(t, wa), ad::sub(ad::leaf(t, f), ad::leaf(t, a)));
    ad::Var db = ad::mul(ad::leaf(t, wb), ad::sub(ad::leaf(t, f), ad::leaf(t, b)));
    return ad::add(ad::mean_all(ad::mul(da, da)), ad::mean_all(ad::mul(db, db)));
  });
  REQUIRE(got == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("degenerate all-A weighting reduces to the unweighted loss against A") {
  Rng rng(38);
  Tensor f = img8(rng), a = img8(rng), b = img8(rng);
  Tensor ones = Tensor::full({1, 1, 8, 8}, 1.0);
  Tensor zeros = Tensor::zeros({1, 1, 8, 8});
  LossWeights w = small_window();
  const double got = scalar_of([&](ad::Tape& t) {
    return weighted_task_loss(ad::leaf(t, f), ad::leaf(t, a), ad::leaf(t, b), ones, zeros, w);
  });
  const double want = scalar_of([&](ad::Tape& t) {
    ad::Var lint = intensity_loss(ad::leaf(t, f), ad::leaf(t, a));
    ad::Var lssim = ssim_loss(ad::leaf(t, f), ad::leaf(t, a), w);
    return ad::add(lint, ad::scale(lssim, w.mu));
  });
  REQUIRE(got == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("weighted task loss gradients match finite differences") {
  Rng rng(39);
  Tensor a = img8(rng), b = img8(rng);
  auto [ma, mb] = saliency_weights(a, b);
  LossWeights w = small_window();
  std::vector<Tensor> in = {img8(rng), a, b};
  auto rep = tt::check_gradients(in, [ma, mb, w](ad::Tape& t, std::vector<ad::Var>& x) {
    return weighted_task_loss(x[0], x[1], x[2], ma, mb, w);
  });
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("feature richness weights split evenly on identical sources") {
  Rng rng(40);
  Tensor x = img8(rng);
  LossWeights w;
  auto [wa, wb] = feature_richness_weights(x, x, w);
  for (std::size_t i = 0; i < wa.v.size(); ++i) {
    REQUIRE(wa.v[i] == 0.5);
    REQUIRE(wb.v[i] == 0.5);
  }
  // equal maps make the loss the plain reconstruction error vs the source
  Tensor f = img8(rng);
  const double got = scalar_of([&](ad::Tape& t) {
    return feature_richness_loss(ad::leaf(t, f), ad::leaf(t, x), ad::leaf(t, x), w);
  });
  const double want =
      scalar_of([&](ad::Tape& t) { return intensity_loss(ad::leaf(t, f), ad::leaf(t, x)); });
  REQUIRE(got == Catch::Approx(want).epsilon(1e-12));

  const double self = scalar_of([&](ad::Tape& t) {
    return feature_richness_loss(ad::leaf(t, x), ad::leaf(t, x), ad::leaf(t, x), w);
  });
  REQUIRE(self == 0.0);
}

TEST_CASE("textured source outweighs a flat one at every pixel") {
  // A ramp has nonzero gradient energy everywhere; a constant image has none.
  Tensor ramp({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(0, 0, y, x) = x / 7.0;
  Tensor flat = Tensor::full({1, 1, 8, 8}, 0.5);
  LossWeights w;
  auto [wa, wb] = feature_richness_weights(ramp, flat, w);
  for (double v : wa.v) REQUIRE(v > 0.5);
  for (double v : wb.v) REQUIRE(v < 0.5);
}

TEST_CASE("feature richness loss gradients match finite differences") {
  Rng rng(41);
  Tensor a = img8(rng), b = img8(rng);
  LossWeights w;
  auto [wa, wb] = feature_richness_weights(a, b, w);
  std::vector<Tensor> in = {img8(rng), a, b};
  auto rep = tt::check_gradients(in, [wa, wb](ad::Tape& t, std::vector<ad::Var>& x) {
    return feature_richness_loss(x[0], x[1], x[2], wa, wb);
  });
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("external weighting mode demands explicit maps") {
  Rng rng(42);
  Tensor x = img8(rng);
  LossWeights w;
  w.feature_weights = "external";
  ad::Tape t;
  REQUIRE_THROWS_AS(feature_richness_loss(ad::leaf(t, x), ad::leaf(t, x), ad::leaf(t, x), w),
                    std::invalid_argument);
}

TEST_CASE("joint objective composes task and fusion terms") {
  ad::Tape t;
  ad::Var task = ad::leaf(t, Tensor::scalar(0.75));
  ad::Var fusion = ad::leaf(t, Tensor::scalar(0.4));
  REQUIRE(joint_objective(task, fusion, 0.0).val().item() == 0.75);
  REQUIRE(joint_objective(task, fusion, 0.5).val().item() == Catch::Approx(0.95));
  ad::Var zero_task = ad::leaf(t, Tensor::scalar(0.0));
  REQUIRE(joint_objective(zero_task, fusion, 2.0).val().item() == Catch::Approx(0.8));
}

TEST_CASE("task gradient reaches fusion parameters even without the fusion term") {
  // two-parameter toy: the fused image is built from theta, the task loss
  // reads only the fused image, eta is zero; gradient still flows into theta
  Rng rng(43);
  Tensor x = img8(rng);
  Tensor y = img8(rng);
  Tensor theta = Tensor::full({1, 1, 8, 8}, 0.7);

  ad::Tape t;
  ad::Var th = ad::leaf(t, theta, true);
  ad::Var fused = ad::mul(th, ad::leaf(t, x));
  ad::Var task = intensity_loss(fused, ad::leaf(t, y));
  ad::Var fusion = intensity_loss(fused, ad::leaf(t, x));
  ad::Var obj = joint_objective(task, fusion, 0.0);
  t.backward(obj.id);
  Tensor g = t.grad(th.id);
  double norm = 0.0;
  for (double v : g.v) norm += v * v;
  REQUIRE(norm > 1e-8);

  std::vector<Tensor> in = {theta};
  auto rep = tt::check_gradients(in, [x, y](ad::Tape& tp, std::vector<ad::Var>& leaves) {
    ad::Var fused = ad::mul(leaves[0], ad::leaf(tp, x));
    ad::Var task = intensity_loss(fused, ad::leaf(tp, y));
    ad::Var fusion = intensity_loss(fused, ad::leaf(tp, x));
    return joint_objective(task, fusion, 0.0);
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("every loss is nonnegative and zero at equality") {
  Rng rng(44);
  Tensor x = img8(rng);
  LossWeights w = small_window();
  auto [ma, mb] = saliency_weights(x, x);
  REQUIRE(scalar_of([&](ad::Tape& t) { return intensity_loss(ad::leaf(t, x), ad::leaf(t, x)); }) == 0.0);
  REQUIRE(scalar_of([&](ad::Tape& t) { return ssim_loss(ad::leaf(t, x), ad::leaf(t, x), w); }) == 0.0);
  REQUIRE(scalar_of([&](ad::Tape& t) {
            return weighted_task_loss(ad::leaf(t, x), ad::leaf(t, x), ad::leaf(t, x), ma, mb, w);
          }) == 0.0);
  REQUIRE(scalar_of([&](ad::Tape& t) {
            return feature_richness_loss(ad::leaf(t, x), ad::leaf(t, x), ad::leaf(t, x), w);
          }) == 0.0);

  Rng rng2(45);
  for (int k = 0; k < 5; ++k) {
    Tensor f = img8(rng2), a = img8(rng2), b = img8(rng2);
    auto [pa, pb] = saliency_weights(a, b);
    REQUIRE(scalar_of([&](ad::Tape& t) {
              return intensity_loss(ad::leaf(t, f), ad::leaf(t, a));
            }) >= 0.0);
    REQUIRE(scalar_of([&](ad::Tape& t) {
              return weighted_task_loss(ad::leaf(t, f), ad::leaf(t, a), ad::leaf(t, b), pa, pb, w);
            }) >= 0.0);
    REQUIRE(scalar_of([&](ad::Tape& t) {
              return feature_richness_loss(ad::leaf(t, f), ad::leaf(t, a), ad::leaf(t, b), w);
            }) >= 0.0);
  }
}
