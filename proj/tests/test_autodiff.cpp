#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "support/finite_diff.hpp"
#include "taskfuse/core/rng.hpp"
#include "taskfuse/core/tape.hpp"
#include "taskfuse/core/tensor.hpp"

using namespace taskfuse;
namespace tt = taskfuse::test;

namespace {

Tensor rand_t(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// keeps leaky_relu inputs away from the kink so central differences are clean
Tensor rand_away_from_zero(std::vector<int> shape, Rng& rng) {
  Tensor t = Tensor::uniform(std::move(shape), rng, 0.1, 1.0);
  for (auto& x : t.v)
    if (rng.uniform() < 0.5) x = -x;
  return t;
}

}  // namespace

TEST_CASE("elementwise arithmetic gradients match finite differences") {
  Rng rng(11);
  std::vector<Tensor> in = {rand_t({1, 2, 3, 3}, rng), rand_t({1, 2, 3, 3}, rng, 0.5, 1.5)};
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    ad::Var a = x[0], b = x[1];
    ad::Var e = ad::add(ad::mul(a, b), ad::sub(a, ad::scale(b, 0.25)));
    e = ad::div(e, ad::add_const(ad::mul(b, b), 1.0));
    return ad::mean_all(e);
  });
  INFO("analytic=" << rep.analytic << " numeric=" << rep.numeric);
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("value reused in two branches accumulates gradient") {
  Rng rng(12);
  std::vector<Tensor> in = {rand_t({1, 1, 2, 2}, rng)};
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    ad::Var a = x[0];
    return ad::sum_all(ad::add(ad::mul(a, a), ad::scale(a, 3.0)));
  });
  REQUIRE(rep.max_rel_err < 1e-6);

  // analytic check: d/da (a^2 + 3a) = 2a + 3
  ad::Tape tape;
  ad::Var a = ad::leaf(tape, in[0], true);
  ad::Var root = ad::sum_all(ad::add(ad::mul(a, a), ad::scale(a, 3.0)));
  tape.backward(root.id);
  Tensor g = tape.grad(a.id);
  for (std::size_t i = 0; i < g.v.size(); ++i)
    REQUIRE(g.v[i] == Catch::Approx(2.0 * in[0].v[i] + 3.0).epsilon(1e-12));
}

TEST_CASE("activation gradients match finite differences") {
  Rng rng(13);
  std::vector<Tensor> in = {rand_away_from_zero({1, 2, 3, 3}, rng)};
  auto lrelu = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::leaky_relu(x[0], 0.2));
  });
  REQUIRE(lrelu.max_rel_err < 1e-6);
  auto sig = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::mul(ad::sigmoid(x[0]), x[0]));
  });
  REQUIRE(sig.max_rel_err < 1e-6);
  auto th = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::tanh_act(x[0]));
  });
  REQUIRE(th.max_rel_err < 1e-6);
}

TEST_CASE("softmax normalizes, is shift invariant, and has correct gradients") {
  Rng rng(14);
  Tensor logits = rand_t({4}, rng, -2.0, 2.0);
  {
    ad::Tape tape;
    ad::Var l = ad::leaf(tape, logits);
    ad::Var w = ad::softmax(l);
    double s = 0.0;
    for (double x : w.val().v) s += x;
    REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));

    Tensor shifted = logits;
    for (auto& x : shifted.v) x += 100.0;
    ad::Var w2 = ad::softmax(ad::leaf(tape, shifted));
    for (std::size_t i = 0; i < 4; ++i)
      REQUIRE(w.val().v[i] == Catch::Approx(w2.val().v[i]).epsilon(1e-12));
  }
  Tensor coef = rand_t({4}, rng);
  auto rep = tt::check_gradients({logits, coef}, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::sum_all(ad::mul(ad::softmax(x[0]), x[1]));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("mix combines candidates and differentiates through weights") {
  Rng rng(15);
  Tensor w({3}, {0.2, 0.5, 0.3});
  std::vector<Tensor> in = {w, rand_t({1, 1, 2, 3}, rng), rand_t({1, 1, 2, 3}, rng),
                            rand_t({1, 1, 2, 3}, rng)};
  {
    ad::Tape tape;
    ad::Var wv = ad::leaf(tape, in[0]);
    std::vector<ad::Var> ys = {ad::leaf(tape, in[1]), ad::leaf(tape, in[2]), ad::leaf(tape, in[3])};
    ad::Var m = ad::mix(wv, ys);
    for (std::size_t i = 0; i < m.val().v.size(); ++i)
      REQUIRE(m.val().v[i] ==
              Catch::Approx(0.2 * in[1].v[i] + 0.5 * in[2].v[i] + 0.3 * in[3].v[i]).epsilon(1e-12));
  }
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    std::vector<ad::Var> ys = {x[1], x[2], x[3]};
    ad::Var m = ad::mix(x[0], ys);
    return ad::mean_all(ad::mul(m, m));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("conv2d same padding preserves shape and matches finite differences") {
  Rng rng(16);
  std::vector<Tensor> in = {rand_t({2, 2, 4, 4}, rng), rand_t({3, 2, 3, 3}, rng, -0.5, 0.5),
                            rand_t({3}, rng, -0.1, 0.1)};
  {
    ad::Tape tape;
    ad::Var y = ad::conv2d(ad::leaf(tape, in[0]), ad::leaf(tape, in[1]), ad::leaf(tape, in[2]));
    REQUIRE(y.val().shape == std::vector<int>{2, 3, 4, 4});
  }
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::conv2d(x[0], x[1], x[2]));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("conv2d identity kernel reproduces its input") {
  Rng rng(17);
  Tensor x = rand_t({1, 1, 5, 5}, rng);
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  ad::Tape tape;
  ad::Var y = ad::conv2d(ad::leaf(tape, x), ad::leaf(tape, w), ad::leaf(tape, Tensor::zeros({1})));
  for (std::size_t i = 0; i < x.v.size(); ++i) REQUIRE(y.val().v[i] == x.v[i]);
}

TEST_CASE("conv2d valid padding shrinks by the receptive field") {
  Rng rng(18);
  std::vector<Tensor> in = {rand_t({1, 1, 6, 6}, rng), rand_t({2, 1, 3, 3}, rng),
                            rand_t({2}, rng)};
  {
    ad::Tape tape;
    ad::Var y = ad::conv2d(ad::leaf(tape, in[0]), ad::leaf(tape, in[1]), ad::leaf(tape, in[2]),
                           ad::Pad::Valid);
    REQUIRE(y.val().shape == std::vector<int>{1, 2, 4, 4});
  }
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::conv2d(x[0], x[1], x[2], ad::Pad::Valid));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("dilated conv2d keeps shape with same padding and checks out") {
  Rng rng(19);
  std::vector<Tensor> in = {rand_t({1, 2, 6, 6}, rng), rand_t({2, 2, 3, 3}, rng),
                            rand_t({2}, rng)};
  {
    ad::Tape tape;
    ad::Var y = ad::conv2d(ad::leaf(tape, in[0]), ad::leaf(tape, in[1]), ad::leaf(tape, in[2]),
                           ad::Pad::Same, 2);
    REQUIRE(y.val().shape == std::vector<int>{1, 2, 6, 6});
  }
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::conv2d(x[0], x[1], x[2], ad::Pad::Same, 2));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("grouped conv2d respects channel partitions") {
  Rng rng(20);
  std::vector<Tensor> in = {rand_t({1, 4, 4, 4}, rng), rand_t({4, 2, 3, 3}, rng),
                            rand_t({4}, rng)};
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::conv2d(x[0], x[1], x[2], ad::Pad::Same, 1, 2));
  });
  REQUIRE(rep.max_rel_err < 1e-6);

  // out channel 0 must not see in channels 2,3
  Tensor x = Tensor::zeros({1, 4, 3, 3});
  x.at(0, 3, 1, 1) = 5.0;
  ad::Tape tape;
  ad::Var y = ad::conv2d(ad::leaf(tape, x), ad::leaf(tape, in[1]), ad::leaf(tape, Tensor::zeros({4})),
                         ad::Pad::Same, 1, 2);
  for (int yy = 0; yy < 3; ++yy)
    for (int xx = 0; xx < 3; ++xx) REQUIRE(y.val().at(0, 0, yy, xx) == 0.0);
}

TEST_CASE("downsample2 averages including ragged edges") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  ad::Tape tape;
  ad::Var y = ad::downsample2(ad::leaf(tape, x));
  REQUIRE(y.val().shape == std::vector<int>{1, 1, 2, 2});
  REQUIRE(y.val().at(0, 0, 0, 0) == Catch::Approx((1 + 2 + 4 + 5) / 4.0));
  REQUIRE(y.val().at(0, 0, 0, 1) == Catch::Approx((3 + 6) / 2.0));
  REQUIRE(y.val().at(0, 0, 1, 0) == Catch::Approx((7 + 8) / 2.0));
  REQUIRE(y.val().at(0, 0, 1, 1) == Catch::Approx(9.0));

  Rng rng(21);
  std::vector<Tensor> in = {rand_t({1, 2, 5, 5}, rng)};
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::downsample2(ad::downsample2(x[0])));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("upsample_to inverts downsample shapes and checks out") {
  Rng rng(22);
  std::vector<Tensor> in = {rand_t({1, 1, 5, 7}, rng)};
  {
    ad::Tape tape;
    ad::Var d = ad::downsample2(ad::leaf(tape, in[0]));
    ad::Var u = ad::upsample_to(d, 5, 7);
    REQUIRE(u.val().shape == in[0].shape);
  }
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    ad::Var u = ad::upsample_to(ad::downsample2(x[0]), 5, 7);
    return ad::mean_all(ad::mul(u, u));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("pooling and channel reductions differentiate") {
  Rng rng(23);
  std::vector<Tensor> in = {rand_t({2, 3, 4, 4}, rng)};
  auto gap = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::sum_all(ad::global_avg_pool(x[0]));
  });
  REQUIRE(gap.max_rel_err < 1e-6);
  auto cm = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::mul(ad::channel_mean(x[0]), ad::channel_mean(x[0])));
  });
  REQUIRE(cm.max_rel_err < 1e-6);
  auto cx = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::channel_max(x[0]));
  });
  REQUIRE(cx.max_rel_err < 1e-6);
}

TEST_CASE("global_avg_pool value is the spatial mean") {
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  ad::Tape tape;
  ad::Var y = ad::global_avg_pool(ad::leaf(tape, x));
  REQUIRE(y.val().at(0, 0, 0, 0) == Catch::Approx(2.5));
  REQUIRE(y.val().at(0, 1, 0, 0) == Catch::Approx(25.0));
}

TEST_CASE("broadcast multiply handles channel and spatial gates") {
  Rng rng(24);
  std::vector<Tensor> cin = {rand_t({2, 3, 3, 3}, rng), rand_t({2, 3, 1, 1}, rng)};
  auto crep = tt::check_gradients(cin, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::mul_bcast(x[0], x[1]));
  });
  REQUIRE(crep.max_rel_err < 1e-6);

  std::vector<Tensor> sin_ = {rand_t({2, 3, 3, 3}, rng), rand_t({2, 1, 3, 3}, rng)};
  auto srep = tt::check_gradients(sin_, [](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::mean_all(ad::mul_bcast(x[0], x[1]));
  });
  REQUIRE(srep.max_rel_err < 1e-6);
}

TEST_CASE("concat_channels splits gradient by source") {
  Rng rng(25);
  std::vector<Tensor> in = {rand_t({1, 2, 3, 3}, rng), rand_t({1, 3, 3, 3}, rng)};
  {
    ad::Tape tape;
    ad::Var c = ad::concat_channels({ad::leaf(tape, in[0]), ad::leaf(tape, in[1])});
    REQUIRE(c.val().shape == std::vector<int>{1, 5, 3, 3});
    REQUIRE(c.val().at(0, 0, 1, 1) == in[0].at(0, 0, 1, 1));
    REQUIRE(c.val().at(0, 2, 1, 1) == in[1].at(0, 0, 1, 1));
  }
  auto rep = tt::check_gradients(in, [](ad::Tape& t, std::vector<ad::Var>& x) {
    ad::Var c = ad::concat_channels({x[0], x[1]});
    return ad::mean_all(ad::mul(c, c));
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("bce_with_logits matches the stable closed form and its gradient") {
  Rng rng(26);
  Tensor z = rand_t({1, 1, 2, 2}, rng, -3.0, 3.0);
  Tensor tgt({1, 1, 2, 2}, {1, 0, 1, 0});
  {
    ad::Tape tape;
    ad::Var l = ad::bce_with_logits(ad::leaf(tape, z), tgt);
    double want = 0.0;
    for (std::size_t i = 0; i < z.v.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z.v[i]));
      want += -(tgt.v[i] * std::log(p) + (1.0 - tgt.v[i]) * std::log(1.0 - p));
    }
    REQUIRE(l.val().item() == Catch::Approx(want / 4.0).epsilon(1e-10));
  }
  auto rep = tt::check_gradients({z}, [tgt](ad::Tape& t, std::vector<ad::Var>& x) {
    return ad::bce_with_logits(x[0], tgt);
  });
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("gradients of non-participating leaves stay zero") {
  Rng rng(27);
  ad::Tape tape;
  ad::Var a = ad::leaf(tape, rand_t({2, 2}, rng), true);
  ad::Var b = ad::leaf(tape, rand_t({2, 2}, rng), true);
  ad::Var root = ad::sum_all(ad::mul(a, a));
  tape.backward(root.id);
  Tensor gb = tape.grad(b.id);
  for (double x : gb.v) REQUIRE(x == 0.0);
}
