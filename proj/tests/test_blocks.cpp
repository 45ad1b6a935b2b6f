#include <gtest/gtest.h>

#include <algorithm>

#include "affect/blocks.hpp"
#include "affect/train.hpp"
#include "oracles.hpp"

using namespace affect;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::size_t count_kind_prefix(const std::vector<std::string>& kinds,
                              const std::string& prefix) {
  return static_cast<std::size_t>(
      std::count_if(kinds.begin(), kinds.end(), [&prefix](const std::string& k) {
        return k.rfind(prefix, 0) == 0;
      }));
}

TEST(NetConfig, TextRoundTrip) {
  NetConfig cfg;
  cfg.variant = Variant::Lstm;
  cfg.width_mult = 0.5;
  cfg.keep_prob = 0.9;
  cfg.residual_scale = 0.2;
  cfg.lstm_hidden = 64;
  const NetConfig back = NetConfig::from_text(cfg.to_text());
  EXPECT_EQ(back.variant, cfg.variant);
  EXPECT_EQ(back.width_mult, cfg.width_mult);
  EXPECT_EQ(back.keep_prob, cfg.keep_prob);
  EXPECT_EQ(back.residual_scale, cfg.residual_scale);
  EXPECT_EQ(back.lstm_hidden, cfg.lstm_hidden);
}

TEST(NetConfig, ParserAcceptsCommentsAndRejectsJunk) {
  const NetConfig cfg = NetConfig::from_text(
      "# architecture\nvariant = deep\nwidth_mult = 0.5  # half width\n\n");
  EXPECT_EQ(cfg.variant, Variant::Deep);
  EXPECT_EQ(cfg.width_mult, 0.5);
  EXPECT_THROW(NetConfig::from_text("variant = resnet50\n"), UnknownVariant);
  EXPECT_THROW(NetConfig::from_text("widht_mult = 1\n"), InvalidOverride);
  EXPECT_THROW(NetConfig::from_text("width_mult = banana\n"), InvalidOverride);
  EXPECT_THROW(NetConfig::from_text("keep_prob = 1.5\n"), InvalidOverride);
  EXPECT_THROW(NetConfig::from_text("lstm_hidden = 2.5\n"), InvalidOverride);
}

TEST(BuildNetwork, ShallowSmokeForward) {
  Rng rng(1);
  NetConfig cfg;
  cfg.variant = Variant::Shallow;
  Network net = build_network(cfg, rng);
  const Tensor out = net.forward(Tensor({1, 49, 49, 3}), Mode::Eval);
  ASSERT_EQ(out.shape(), (Shape{1, 2}));
  EXPECT_TRUE(out.all_finite());
}

TEST(BuildNetwork, BatchDimensionPreservedAndFinite) {
  Rng rng(2);
  NetConfig cfg;
  cfg.variant = Variant::Deep;
  cfg.width_mult = 0.25;
  Network net = build_network(cfg, rng);
  const Tensor batch({4, 49, 49, 3}, random_values(4 * 49 * 49 * 3, rng, 0, 1));
  ShapeTrace trace;
  const Tensor out = net.forward(batch, Mode::Eval, nullptr, &trace);
  ASSERT_EQ(out.shape(), (Shape{4, 2}));
  EXPECT_TRUE(out.all_finite());
  for (const auto& [name, shape] : trace.stages) EXPECT_EQ(shape[0], 4u);
}

TEST(BuildNetwork, RejectsBadInputShape) {
  Rng rng(3);
  Network net = build_network(NetConfig{}, rng);
  EXPECT_THROW(net.forward(Tensor({1, 48, 49, 3}), Mode::Eval), ShapeMismatch);
  EXPECT_THROW(net.forward(Tensor({1, 49, 49, 1}), Mode::Eval), ShapeMismatch);
}

TEST(BuildNetwork, DeepReductionSees13x13And7x7) {
  Rng rng(4);
  NetConfig cfg;
  cfg.variant = Variant::Deep;
  Network net = build_network(cfg, rng);
  ShapeTrace trace;
  net.forward(Tensor({1, 49, 49, 3}), Mode::Eval, nullptr, &trace);
  const Shape* before = trace.find("inception_a");  // reduction input
  const Shape* after = trace.find("reduction");
  ASSERT_NE(before, nullptr);
  ASSERT_NE(after, nullptr);
  EXPECT_EQ((*before)[1], 13u);
  EXPECT_EQ((*before)[2], 13u);
  EXPECT_EQ((*after)[1], 7u);
  EXPECT_EQ((*after)[2], 7u);
}

TEST(BuildNetwork, DeepSpatialTrajectory49To13To7) {
  Rng rng(5);
  NetConfig cfg;
  cfg.variant = Variant::Deep;
  Network net = build_network(cfg, rng);
  ShapeTrace trace;
  net.forward(Tensor({2, 49, 49, 3}), Mode::Eval, nullptr, &trace);
  EXPECT_EQ((*trace.find("input"))[1], 49u);
  EXPECT_EQ((*trace.find("stem"))[1], 13u);
  EXPECT_EQ((*trace.find("reduction"))[1], 7u);
  EXPECT_EQ((*trace.find("inception_b"))[1], 7u);
}

TEST(BuildNetwork, LstmConcatenatedFeatureWidthIs400) {
  Rng rng(6);
  NetConfig cfg;
  cfg.variant = Variant::Lstm;
  Network net = build_network(cfg, rng);
  ASSERT_TRUE(net.lstm_width.has_value());
  EXPECT_EQ(net.lstm_width->hidden, 200u);
  ShapeTrace trace;
  net.forward(Tensor({1, 49, 49, 3}), Mode::Eval, nullptr, &trace);
  const Shape* head_in = trace.find("lstm_head");
  ASSERT_NE(head_in, nullptr);
  EXPECT_EQ(head_in->back(), 400u);
  EXPECT_EQ(net.head.weight.dim(0), 400u);
}

TEST(BuildNetwork, BlockKindCountsPerVariant) {
  Rng rng(7);
  NetConfig shallow;
  shallow.variant = Variant::Shallow;
  const auto shallow_kinds = build_network(shallow, rng).block_kinds();
  EXPECT_EQ(count_kind_prefix(shallow_kinds, "inception_resnet"), 1u);
  EXPECT_EQ(count_kind_prefix(shallow_kinds, "reduction"), 0u);

  NetConfig deep;
  deep.variant = Variant::Deep;
  const auto deep_kinds = build_network(deep, rng).block_kinds();
  EXPECT_EQ(count_kind_prefix(deep_kinds, "inception_resnet"), 2u);
  EXPECT_EQ(count_kind_prefix(deep_kinds, "reduction"), 1u);
}

TEST(BuildNetwork, DeepHasMoreParametersThanShallow) {
  Rng rng(8);
  NetConfig shallow;
  shallow.variant = Variant::Shallow;
  NetConfig deep;
  deep.variant = Variant::Deep;
  Network s = build_network(shallow, rng);
  Network d = build_network(deep, rng);
  EXPECT_GT(d.parameter_count(), s.parameter_count());
}

TEST(BuildNetwork, DenseHeadParameterArithmetic) {
  // A width-100 input head contributes exactly 100*2 + 2 scalars.
  DenseParams head{Tensor({100, 2}), Tensor({2})};
  EXPECT_EQ(head.weight.size() + head.bias.size(), 202u);
}

TEST(BuildNetwork, ParameterCountInvariantUnderUse) {
  Rng rng(9);
  NetConfig cfg;
  cfg.variant = Variant::Shallow;
  cfg.width_mult = 0.25;
  Network net = build_network(cfg, rng);
  const std::size_t before = net.parameter_count();
  Rng drop(3);
  const Tensor batch({2, 49, 49, 3}, random_values(2 * 49 * 49 * 3, rng, 0, 1));
  const Tensor loss = mse_loss(net.forward(batch, Mode::Train, &drop), Tensor({2, 2}));
  loss.backward();
  EXPECT_EQ(net.parameter_count(), before);
}

TEST(BuildNetwork, EvalForwardIsDeterministic) {
  Rng rng(10);
  NetConfig cfg;
  cfg.variant = Variant::Deep;
  cfg.width_mult = 0.25;
  Network net = build_network(cfg, rng);
  const Tensor batch({3, 49, 49, 3}, random_values(3 * 49 * 49 * 3, rng, 0, 1));
  const Tensor a = net.forward(batch, Mode::Eval);
  const Tensor b = net.forward(batch, Mode::Eval);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(ResidualBlocks, ZeroProjectionGivesReluIdentity) {
  Rng rng(11);
  NetConfig cfg;
  cfg.variant = Variant::Deep;
  cfg.width_mult = 0.5;
  Network net = build_network(cfg, rng);
  // Zero the A-block projection; its Linear batchnorm then outputs exactly 0.
  for (Tensor* t : {&net.block_a.proj.conv.kernel, &net.block_a.proj.conv.bias,
                    &net.block_a.proj.bn.beta})
    std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
  const std::size_t c = net.block_a.proj.conv.kernel.dim(3);
  Tensor x({2, 5, 5, c}, random_values(2 * 5 * 5 * c, rng));
  const Tensor y = net.block_a.forward(x, Mode::Eval);
  for (std::size_t i = 0; i < x.size(); ++i)
    ASSERT_EQ(y[i], std::max(0.0, x[i]));  // ReLU(identity)
}

TEST(ResidualBlocks, BranchesPreserveSpatialExtent) {
  Rng rng(12);
  NetConfig cfg;
  cfg.variant = Variant::Deep;
  cfg.width_mult = 0.25;
  Network net = build_network(cfg, rng);
  const std::size_t ca = net.block_a.proj.conv.kernel.dim(3);
  const Tensor xa({1, 9, 9, ca}, random_values(81 * ca, rng));
  EXPECT_EQ(net.block_a.forward(xa, Mode::Eval).shape(), xa.shape());
  const std::size_t cb = net.block_b->proj.conv.kernel.dim(3);
  const Tensor xb({1, 7, 7, cb}, random_values(49 * cb, rng));
  EXPECT_EQ(net.block_b->forward(xb, Mode::Eval).shape(), xb.shape());
}

TEST(EndToEnd, GradientsMatchFiniteDifferencesOnParameterSample) {
  // Reduced widths keep the finite-difference probes cheap; keep_prob = 1 makes
  // the Train-mode forward deterministic so probes see a fixed function.
  Rng data_rng(13);
  const Tensor batch({2, 49, 49, 3}, random_values(2 * 49 * 49 * 3, data_rng, 0, 1));
  const Tensor target({2, 2}, random_values(4, data_rng));
  for (Variant variant : {Variant::Shallow, Variant::Deep, Variant::Lstm}) {
    SCOPED_TRACE(variant_name(variant));
    NetConfig cfg;
    cfg.variant = variant;
    cfg.width_mult = 0.25;
    cfg.keep_prob = 1.0;
    cfg.lstm_hidden = 6;
    Rng rng(14);
    Network net = build_network(cfg, rng);
    auto params = net.trainable_parameters();
    for (auto& [name, tensor] : params) tensor->clear_grad();

    Rng drop(99);
    mse_loss(net.forward(batch, Mode::Train, &drop), target).backward();

    Rng pick(15 + static_cast<std::uint64_t>(variant));
    for (int probe = 0; probe < 20; ++probe) {
      auto& [name, tensor] = params[pick.below(params.size())];
      const std::size_t idx = pick.below(tensor->size());
      SCOPED_TRACE(name + "[" + std::to_string(idx) + "]");
      const double saved = tensor->data()[idx];
      const double step = 1e-5;
      auto eval_loss = [&]() {
        NoGradGuard no_grad;
        Rng d(99);
        return mse_loss(net.forward(batch, Mode::Train, &d), target).value();
      };
      tensor->mutable_data()[idx] = saved + step;
      const double up = eval_loss();
      tensor->mutable_data()[idx] = saved - step;
      const double down = eval_loss();
      tensor->mutable_data()[idx] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double analytic = tensor->has_grad() ? tensor->grad()[idx] : 0.0;
      const double scale = std::max({1.0, std::fabs(fd), std::fabs(analytic)});
      EXPECT_LE(std::fabs(fd - analytic) / scale, 1e-3);
    }
  }
}

TEST(EndToEnd, TrainModeBatchnormMutatesOnlyRunningStats) {
  Rng rng(16);
  NetConfig cfg;
  cfg.variant = Variant::Shallow;
  cfg.width_mult = 0.25;
  Network net = build_network(cfg, rng);
  const std::vector<double> gamma_before(net.stem.c0.bn.gamma.data().begin(),
                                         net.stem.c0.bn.gamma.data().end());
  const std::vector<double> rm_before(net.stem.c0.bn.running_mean.data().begin(),
                                      net.stem.c0.bn.running_mean.data().end());
  Rng drop(1);
  const Tensor batch({2, 49, 49, 3}, random_values(2 * 49 * 49 * 3, rng, 0, 1));
  net.forward(batch, Mode::Train, &drop);
  bool rm_changed = false;
  for (std::size_t i = 0; i < rm_before.size(); ++i)
    rm_changed = rm_changed || net.stem.c0.bn.running_mean[i] != rm_before[i];
  EXPECT_TRUE(rm_changed);
  for (std::size_t i = 0; i < gamma_before.size(); ++i)
    EXPECT_EQ(net.stem.c0.bn.gamma[i], gamma_before[i]);
}

}  // namespace
