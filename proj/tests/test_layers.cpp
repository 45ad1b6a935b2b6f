#include <gtest/gtest.h>

#include <numeric>

#include "affect/layers.hpp"
#include "oracles.hpp"

using namespace affect;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

ConvParams make_conv(Shape kshape, std::vector<double> kdata, std::vector<double> bias,
                     std::size_t sh, std::size_t sw, Padding pad) {
  ConvParams p;
  const std::size_t cout = kshape[3];
  p.kernel = Tensor(std::move(kshape), std::move(kdata));
  p.bias = bias.empty() ? Tensor::zeros({cout}) : Tensor({cout}, std::move(bias));
  p.stride_h = sh;
  p.stride_w = sw;
  p.padding = pad;
  return p;
}

BatchNormParams make_bn(std::size_t c, Activation act, double eps = 1e-3) {
  BatchNormParams p;
  p.gamma = Tensor::full({c}, 1.0);
  p.beta = Tensor::zeros({c});
  p.running_mean = Tensor::zeros({c});
  p.running_var = Tensor::full({c}, 1.0);
  p.epsilon = eps;
  p.activation = act;
  return p;
}

oracle::PadSpec pad_spec_for(const Shape& x, const Shape& k, std::size_t sh,
                             std::size_t sw, Padding pad) {
  // Recomputed from the documented rule (Same: total = (out-1)*s + k - in,
  // floor half before) rather than read out of the implementation.
  auto out_of = [pad](std::size_t in, std::size_t kk, std::size_t s) {
    return pad == Padding::Valid ? (in - kk) / s + 1 : (in + s - 1) / s;
  };
  oracle::PadSpec spec;
  if (pad == Padding::Same) {
    const long th = std::max<long>(0, long((out_of(x[1], k[0], sh) - 1) * sh + k[0]) - long(x[1]));
    const long tw = std::max<long>(0, long((out_of(x[2], k[1], sw) - 1) * sw + k[1]) - long(x[2]));
    spec.before_h = th / 2;
    spec.before_w = tw / 2;
  }
  return spec;
}

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(11);
  const Tensor x({1, 4, 5, 1}, random_values(20, rng));
  const ConvParams p = make_conv({1, 1, 1, 1}, {1.0}, {}, 1, 1, Padding::Valid);
  const Tensor y = conv2d(x, p);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, AllOnesSummation) {
  const Tensor x = Tensor::full({1, 3, 3, 1}, 1.0);
  const ConvParams p =
      make_conv({3, 3, 1, 1}, std::vector<double>(9, 1.0), {}, 1, 1, Padding::Valid);
  const Tensor y = conv2d(x, p);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.value(), 9.0);
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  Rng rng(42);
  const Tensor x({1, 5, 5, 2}, random_values(50, rng));
  const Tensor kernel({3, 3, 2, 4}, random_values(72, rng));
  const std::vector<double> bias = random_values(4, rng);
  ConvParams p = make_conv(kernel.shape(), {kernel.data().begin(), kernel.data().end()},
                           bias, 2, 2, Padding::Same);
  const Tensor y = conv2d(x, p);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 4}));
  const auto ref = oracle::conv2d_reference(
      x.data(), 1, 5, 5, 2, kernel.data(), 3, 3, 4, bias, 2, 2, 3, 3,
      pad_spec_for(x.shape(), kernel.shape(), 2, 2, Padding::Same));
  ASSERT_EQ(ref.size(), y.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, RandomConfigsMatchOracle) {
  Rng rng(7);
  struct Cfg { std::size_t h, w, cin, k, cout, s; Padding pad; };
  const Cfg cfgs[] = {
      {6, 7, 1, 2, 3, 1, Padding::Same},  {5, 5, 3, 3, 2, 2, Padding::Valid},
      {8, 4, 2, 3, 2, 3, Padding::Same},  {7, 7, 2, 4, 1, 2, Padding::Same},
      {9, 9, 1, 5, 2, 2, Padding::Valid},
  };
  for (const Cfg& c : cfgs) {
    const Tensor x({2, c.h, c.w, c.cin}, random_values(2 * c.h * c.w * c.cin, rng));
    const Tensor kernel({c.k, c.k, c.cin, c.cout},
                        random_values(c.k * c.k * c.cin * c.cout, rng));
    const std::vector<double> bias = random_values(c.cout, rng);
    ConvParams p = make_conv(kernel.shape(),
                             {kernel.data().begin(), kernel.data().end()}, bias, c.s,
                             c.s, c.pad);
    const Tensor y = conv2d(x, p);
    const auto ref = oracle::conv2d_reference(
        x.data(), 2, c.h, c.w, c.cin, kernel.data(), c.k, c.k, c.cout, bias, c.s, c.s,
        y.dim(1), y.dim(2), pad_spec_for(x.shape(), kernel.shape(), c.s, c.s, c.pad));
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv2d, SamePaddingStride1PreservesShapeForOddKernels) {
  Rng rng(8);
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    const Tensor x({1, 9, 11, 2}, random_values(9 * 11 * 2, rng));
    ConvParams p;
    p.kernel = Tensor({k, k, 2, 3}, random_values(k * k * 6, rng));
    p.bias = Tensor::zeros({3});
    p.padding = Padding::Same;
    const Tensor y = conv2d(x, p);
    EXPECT_EQ(y.dim(1), x.dim(1));
    EXPECT_EQ(y.dim(2), x.dim(2));
  }
}

TEST(Conv2d, Errors) {
  const Tensor x({1, 4, 4, 2});
  ConvParams wrong_cin = make_conv({3, 3, 3, 4}, std::vector<double>(108, 0.0), {}, 1, 1,
                                   Padding::Same);
  EXPECT_THROW(conv2d(x, wrong_cin), ShapeMismatch);
  ConvParams too_large =
      make_conv({5, 5, 2, 1}, std::vector<double>(50, 0.0), {}, 1, 1, Padding::Valid);
  EXPECT_THROW(conv2d(x, too_large), KernelTooLarge);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(55);
  struct Cfg { std::size_t h, w, cin, k, cout, s; Padding pad; };
  const Cfg cfgs[] = {
      {5, 5, 2, 3, 2, 1, Padding::Same},  {5, 4, 1, 2, 2, 2, Padding::Valid},
      {4, 6, 2, 3, 1, 2, Padding::Same},  {6, 6, 1, 3, 2, 3, Padding::Valid},
      {3, 3, 2, 1, 3, 1, Padding::Same},
  };
  for (const Cfg& c : cfgs) {
    Tensor x({1, c.h, c.w, c.cin}, random_values(c.h * c.w * c.cin, rng));
    Tensor kernel({c.k, c.k, c.cin, c.cout},
                  random_values(c.k * c.k * c.cin * c.cout, rng));
    Tensor bias({c.cout}, random_values(c.cout, rng));
    x.set_requires_grad(true);
    kernel.set_requires_grad(true);
    bias.set_requires_grad(true);
    ConvParams p{kernel, bias, c.s, c.s, c.pad};
    // Weight the outputs so gradients are not all-ones sums.
    Tensor w0 = conv2d(x, p);
    Tensor weights(w0.shape(), random_values(w0.size(), rng));
    sum(mul(conv2d(x, p), weights)).backward();

    auto probe = [&](Tensor* target) {
      const std::vector<double> x0(target->data().begin(), target->data().end());
      auto f = [&](const std::vector<double>& vals) {
        NoGradGuard no_grad;
        Tensor tx = target == &x ? Tensor(x.shape(), vals) : x;
        Tensor tk = target == &kernel ? Tensor(kernel.shape(), vals) : kernel;
        Tensor tb = target == &bias ? Tensor(bias.shape(), vals) : bias;
        ConvParams pp{tk, tb, c.s, c.s, c.pad};
        return sum(mul(conv2d(tx, pp), weights)).value();
      };
      const auto fd = oracle::finite_difference(f, x0);
      EXPECT_LE(oracle::max_relative_error(target->grad(), fd), 1e-4);
    };
    probe(&x);
    probe(&kernel);
    probe(&bias);
  }
}

TEST(BatchNorm, TrainConstantInputGivesZero) {
  BatchNormParams p = make_bn(2, Activation::Linear);
  const Tensor x = Tensor::full({2, 3, 3, 2}, 3.25);
  const Tensor y = batchnorm(x, p, Mode::Train);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 0.0, 1e-12);
}

TEST(BatchNorm, EvalDirectSubstitution) {
  // gamma=2, beta=1, running stats (0,1), epsilon ~ 0, x=3 -> ReLU(2*3+1) = 7.
  BatchNormParams p = make_bn(1, Activation::ReLU, 1e-15);
  p.gamma = Tensor::full({1}, 2.0);
  p.beta = Tensor::full({1}, 1.0);
  const Tensor x = Tensor::full({1, 1, 1, 1}, 3.0);
  const Tensor y = batchnorm(x, p, Mode::Eval);
  EXPECT_NEAR(y.value(), 7.0, 1e-9);
}

TEST(BatchNorm, TrainNormalizesBatchStatistics) {
  Rng rng(21);
  BatchNormParams p = make_bn(3, Activation::Linear, 1e-12);
  const Tensor x({4, 5, 5, 3}, random_values(4 * 5 * 5 * 3, rng));
  const Tensor y = batchnorm(x, p, Mode::Train);
  // Recompute statistics on the output, per channel.
  const std::size_t rows = y.size() / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += y[r * 3 + c];
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      var += (y[r * 3 + c] - mean) * (y[r * 3 + c] - mean);
    var /= static_cast<double>(rows);
    EXPECT_LE(std::fabs(mean), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(BatchNorm, DegenerateBatchThrows) {
  BatchNormParams p = make_bn(4, Activation::Linear);
  EXPECT_THROW(batchnorm(Tensor({1, 1, 1, 4}), p, Mode::Train), DegenerateBatch);
  EXPECT_NO_THROW(batchnorm(Tensor({1, 1, 1, 4}), p, Mode::Eval));
}

TEST(BatchNorm, EvalIsDeterministicAffineAndDoesNotMutate) {
  Rng rng(31);
  BatchNormParams p = make_bn(2, Activation::Linear);
  p.running_mean = Tensor::of({2}, {0.2, -0.4});
  p.running_var = Tensor::of({2}, {1.5, 0.25});
  const std::vector<double> rm_before(p.running_mean.data().begin(),
                                      p.running_mean.data().end());
  const Tensor x({3, 2, 2, 2}, random_values(24, rng));
  const Tensor y1 = batchnorm(x, p, Mode::Eval);
  const Tensor y2 = batchnorm(x, p, Mode::Eval);
  for (std::size_t i = 0; i < y1.size(); ++i) ASSERT_EQ(y1[i], y2[i]);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(p.running_mean[i], rm_before[i]);
}

TEST(BatchNorm, TrainUpdatesRunningStatistics) {
  Rng rng(32);
  BatchNormParams p = make_bn(1, Activation::Linear);
  p.momentum = 0.9;
  const Tensor x = Tensor::full({2, 1, 1, 1}, 4.0);
  batchnorm(x, p, Mode::Train);
  EXPECT_NEAR(p.running_mean[0], 0.9 * 0.0 + 0.1 * 4.0, 1e-12);
  EXPECT_NEAR(p.running_var[0], 0.9 * 1.0 + 0.1 * 0.0, 1e-12);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  Rng rng(77);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x({2, 3, 2, 2}, random_values(24, rng));
    Tensor gamma({2}, random_values(2, rng, 0.5, 1.5));
    Tensor beta({2}, random_values(2, rng));
    x.set_requires_grad(true);
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
    Tensor weights({2, 3, 2, 2}, random_values(24, rng));
    auto run = [&](const Tensor& tx, const Tensor& tg, const Tensor& tb) {
      BatchNormParams p;
      p.gamma = tg;
      p.beta = tb;
      p.running_mean = Tensor::zeros({2});
      p.running_var = Tensor::full({2}, 1.0);
      p.activation = trial % 2 ? Activation::ReLU : Activation::Linear;
      const Mode mode = trial == 4 ? Mode::Eval : Mode::Train;
      return sum(mul(batchnorm(tx, p, mode), weights));
    };
    run(x, gamma, beta).backward();
    struct Target { Tensor* t; const char* name; };
    for (const Target& target : {Target{&x, "x"}, Target{&gamma, "gamma"},
                                 Target{&beta, "beta"}}) {
      SCOPED_TRACE(target.name);
      const std::vector<double> x0(target.t->data().begin(), target.t->data().end());
      auto f = [&](const std::vector<double>& vals) {
        NoGradGuard no_grad;
        const Tensor tx = target.t == &x ? Tensor(x.shape(), vals) : x;
        const Tensor tg = target.t == &gamma ? Tensor(gamma.shape(), vals) : gamma;
        const Tensor tb = target.t == &beta ? Tensor(beta.shape(), vals) : beta;
        return run(tx, tg, tb).value();
      };
      const auto fd = oracle::finite_difference(f, x0);
      EXPECT_LE(oracle::max_relative_error(target.t->grad(), fd), 1e-4);
    }
  }
}

TEST(Relu, ExamplesAndGradient) {
  const Tensor y = relu(Tensor::of({3}, {-1, 0, 2}));
  EXPECT_EQ(y[0], 0);
  EXPECT_EQ(y[1], 0);
  EXPECT_EQ(y[2], 2);
  // Idempotence.
  Rng rng(3);
  const Tensor x({10}, random_values(10, rng));
  const Tensor r1 = relu(x);
  const Tensor r2 = relu(r1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(r1[i], r2[i]);
  // Subgradient at 0 is 0; gradient of sum(relu(x)) at [-0.5, 0.5] is [0, 1].
  Tensor g = Tensor::of({2}, {-0.5, 0.5});
  g.set_requires_grad(true);
  sum(relu(g)).backward();
  EXPECT_EQ(g.grad()[0], 0.0);
  EXPECT_EQ(g.grad()[1], 1.0);
  Tensor z = Tensor::of({1}, {0.0});
  z.set_requires_grad(true);
  sum(relu(z)).backward();
  EXPECT_EQ(z.grad()[0], 0.0);
}

TEST(Dropout, EvalIsIdentity) {
  Rng rng(5);
  const Tensor x({4, 4}, random_values(16, rng));
  Rng drop(1);
  const Tensor y = dropout(x, DropoutParams{0.5, Mode::Eval}, drop);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Dropout, KeepAllIsExact) {
  Rng rng(6);
  const Tensor x({4, 4}, random_values(16, rng));
  Rng drop(1);
  const Tensor y = dropout(x, DropoutParams{1.0, Mode::Train}, drop);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Dropout, MonteCarloSurvivorFraction) {
  const std::size_t n = 100000;
  const Tensor x = Tensor::full({n}, 1.0);
  Rng drop(12345);
  const Tensor y = dropout(x, DropoutParams{0.8, Mode::Train}, drop);
  std::size_t survivors = 0;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != 0.0) ++survivors;
    mean += y[i];
  }
  mean /= static_cast<double>(n);
  EXPECT_NEAR(static_cast<double>(survivors) / n, 0.8, 0.01);
  EXPECT_NEAR(mean, 1.0, 0.02);  // E[output] = x within 2%
}

TEST(Dropout, SameSeedSameMask) {
  Rng rng(9);
  const Tensor x({100}, random_values(100, rng));
  Rng d1(777), d2(777);
  const Tensor y1 = dropout(x, DropoutParams{0.6, Mode::Train}, d1);
  const Tensor y2 = dropout(x, DropoutParams{0.6, Mode::Train}, d2);
  for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(y1[i], y2[i]);
}

TEST(Dropout, BackwardReusesMask) {
  Rng rng(10);
  Tensor x({50}, random_values(50, rng));
  x.set_requires_grad(true);
  Rng d(4242);
  const Tensor y = dropout(x, DropoutParams{0.7, Mode::Train}, d);
  sum(y).backward();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double mask = x[i] == 0.0 ? x.grad()[i] : y[i] / x[i];
    EXPECT_NEAR(x.grad()[i], mask, 1e-12);  // gradient is exactly the applied mask
  }
  Rng bad(1);
  EXPECT_THROW(dropout(x, DropoutParams{0.0, Mode::Train}, bad), ShapeMismatch);
}

TEST(Maxpool, Examples) {
  const Tensor x = Tensor::of({1, 2, 2, 1}, {1, 2, 3, 4});
  const Tensor y = maxpool(x, 2, 2, 2, 2, Padding::Valid);
  EXPECT_EQ(y.value(), 4.0);
  Rng rng(2);
  const Tensor z({1, 3, 4, 2}, random_values(24, rng));
  const Tensor id = maxpool(z, 1, 1, 1, 1, Padding::Valid);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(id[i], z[i]);
  EXPECT_THROW(maxpool(z, 4, 4, 1, 1, Padding::Valid), KernelTooLarge);
}

TEST(Maxpool, MatchesNaiveLoopOracle) {
  Rng rng(13);
  for (Padding pad : {Padding::Valid, Padding::Same}) {
    const Tensor x({1, 6, 6, 2}, random_values(72, rng));
    const Tensor y = maxpool(x, 3, 3, 2, 2, pad);
    oracle::PadSpec spec;
    if (pad == Padding::Same) {
      const long total = long((y.dim(1) - 1) * 2 + 3) - 6;
      spec.before_h = spec.before_w = std::max(0L, total) / 2;
    }
    const auto ref = oracle::maxpool_reference(x.data(), 1, 6, 6, 2, 3, 3, 2, 2,
                                               y.dim(1), y.dim(2), spec);
    ASSERT_EQ(ref.size(), y.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y[i], ref[i]);
  }
}

TEST(Maxpool, GradientRoutesToArgmaxFirstOccurrence) {
  // All-equal window: the gradient goes to the first cell in scan order.
  Tensor x = Tensor::full({1, 2, 2, 1}, 5.0);
  x.set_requires_grad(true);
  sum(maxpool(x, 2, 2, 2, 2, Padding::Valid)).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
  EXPECT_EQ(x.grad()[3], 0.0);
}

TEST(Maxpool, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  // Distinct values so the argmax is stable under the probe step.
  std::vector<double> vals(1 * 5 * 5 * 2);
  std::iota(vals.begin(), vals.end(), 0.0);
  Rng shuffle_rng(3);
  std::vector<std::size_t> perm = shuffle_rng.permutation(vals.size());
  std::vector<double> shuffled(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) shuffled[i] = vals[perm[i]] * 0.013;
  Tensor x({1, 5, 5, 2}, shuffled);
  x.set_requires_grad(true);
  Tensor w0 = maxpool(x, 3, 3, 2, 2, Padding::Same);
  Tensor weights(w0.shape(), random_values(w0.size(), rng));
  sum(mul(maxpool(x, 3, 3, 2, 2, Padding::Same), weights)).backward();
  auto f = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return sum(mul(maxpool(Tensor(x.shape(), v), 3, 3, 2, 2, Padding::Same), weights))
        .value();
  };
  const auto fd = oracle::finite_difference(f, shuffled);
  EXPECT_LE(oracle::max_relative_error(x.grad(), fd), 1e-4);
}

TEST(Dense, Examples) {
  const Tensor x = Tensor::of({1, 2}, {1, 2});
  DenseParams ident{Tensor::eye(2), Tensor::zeros({2})};
  const Tensor y = dense(x, ident);
  EXPECT_EQ(y[0], 1);
  EXPECT_EQ(y[1], 2);
  DenseParams p{Tensor::of({2, 1}, {1, 1}), Tensor::of({1}, {1})};
  EXPECT_DOUBLE_EQ(dense(x, p).value(), 4.0);
  EXPECT_THROW(dense(Tensor({1, 3}), p), ShapeMismatch);
}

TEST(Dense, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x({3, 4}, random_values(12, rng));
    Tensor w({4, 2}, random_values(8, rng));
    Tensor b({2}, random_values(2, rng));
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor weights({3, 2}, random_values(6, rng));
    sum(mul(dense(x, DenseParams{w, b}), weights)).backward();
    for (Tensor* target : {&x, &w, &b}) {
      const std::vector<double> x0(target->data().begin(), target->data().end());
      auto f = [&](const std::vector<double>& v) {
        NoGradGuard no_grad;
        const Tensor tx = target == &x ? Tensor(x.shape(), v) : x;
        const Tensor tw = target == &w ? Tensor(w.shape(), v) : w;
        const Tensor tb = target == &b ? Tensor(b.shape(), v) : b;
        return sum(mul(dense(tx, DenseParams{tw, tb}), weights)).value();
      };
      EXPECT_LE(oracle::max_relative_error(target->grad(),
                                           oracle::finite_difference(f, x0)),
                1e-5);
    }
  }
}

TEST(ConcatChannels, Examples) {
  Rng rng(16);
  const Tensor a({3, 200}, random_values(600, rng));
  const Tensor single = concat_channels({a});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(single[i], a[i]);
  const Tensor b({3, 200}, random_values(600, rng));
  const Tensor cat = concat_channels({a, b});
  EXPECT_EQ(cat.shape(), (Shape{3, 400}));
  EXPECT_THROW(concat_channels({a, Tensor({2, 200})}), ShapeMismatch);
}

TEST(ConcatChannels, SplitRoundTripsBitExactly) {
  Rng rng(17);
  const Tensor a({2, 3, 2, 4}, random_values(48, rng));
  const Tensor b({2, 3, 2, 3}, random_values(36, rng));
  const Tensor cat = concat_channels({a, b});
  ASSERT_EQ(cat.shape(), (Shape{2, 3, 2, 7}));
  // Split back by strided copy and compare bit-for-bit.
  for (std::size_t r = 0; r < 12; ++r) {
    for (std::size_t c = 0; c < 4; ++c) ASSERT_EQ(cat[r * 7 + c], a[r * 4 + c]);
    for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(cat[r * 7 + 4 + c], b[r * 3 + c]);
  }
}

TEST(ConcatChannels, BackwardSplitsGradient) {
  Rng rng(18);
  Tensor a({2, 3}, random_values(6, rng));
  Tensor b({2, 2}, random_values(4, rng));
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor weights({2, 5}, random_values(10, rng));
  sum(mul(concat_channels({a, b}), weights)).backward();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_DOUBLE_EQ(a.grad()[r * 3 + c], weights[r * 5 + c]);
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_DOUBLE_EQ(b.grad()[r * 2 + c], weights[r * 5 + 3 + c]);
  }
}

}  // namespace
