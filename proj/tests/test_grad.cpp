#include <random>

#include <gtest/gtest.h>

#include "repcam/grad.hpp"
#include "test_util.hpp"

using namespace repcam;
using repcam::testing::random_tensor;

namespace {

using TapeD = Tape<double>;

// Weighted sum so every output coordinate carries a distinct cotangent.
NodeId probe_loss(TapeD& t, NodeId y, std::mt19937_64& rng) {
  const auto w = random_tensor<double>(t.value(y).shape(), rng);
  const NodeId wn = t.leaf(w, false);
  const NodeId prod = t.record(
      "mul", {y, wn},
      [](auto in) { return zip(*in[0], *in[1], std::multiplies<double>{}, "mul"); },
      [](auto in, const Tensor<double>&, const Tensor<double>& g) {
        Tensor<double> d(g.shape());
        for (std::size_t i = 0; i < d.numel(); ++i) d.data()[i] = g.data()[i] * in[1]->data()[i];
        return std::vector<Tensor<double>>{d, {}};
      });
  return ad::sum(t, prod);
}

}  // namespace

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(1);
  Tape<float> t;
  const NodeId x = t.leaf(random_tensor<float>({2, 3, 4, 4}, rng));
  const auto g = t.backward(ad::sum(t, x));
  for (float v : g[x].data()) EXPECT_EQ(v, 1.0f);
}

TEST(Backward, ConvTapCounting) {
  Tape<float> t;
  const NodeId x = t.leaf(Tensor4({1, 1, 5, 5}, 0.5f));
  const NodeId w = t.leaf(Tensor4({1, 1, 3, 3}, 1.0f));
  const NodeId b = t.leaf(Tensor4({1, 1, 1, 1}));
  const auto g = t.backward(ad::sum(t, ad::conv2d(t, x, w, b, 1)));
  EXPECT_FLOAT_EQ(g[x].at(0, 0, 2, 2), 9.0f);
  EXPECT_FLOAT_EQ(g[x].at(0, 0, 0, 0), 4.0f);
  EXPECT_FLOAT_EQ(g[x].at(0, 0, 0, 2), 6.0f);
  EXPECT_FLOAT_EQ(g[b].data()[0], 25.0f);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape<float> t;
  const NodeId x = t.leaf(Tensor4({1, 1, 2, 2}));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Backward, ReplayReproducesValuesExactly) {
  std::mt19937_64 rng(2);
  Tape<float> t;
  const NodeId x = t.leaf(random_tensor<float>({1, 2, 6, 6}, rng));
  const NodeId w = t.leaf(random_tensor<float>({4, 2, 3, 3}, rng));
  const NodeId b = t.leaf(random_tensor<float>({1, 4, 1, 1}, rng));
  const NodeId y = ad::pixel_shuffle(t, ad::relu(t, ad::conv2d(t, x, w, b, 1)), 2);
  ad::sum(t, ad::bicubic_resize(t, y, Scale::down(2)));
  const auto replayed = t.replay();
  ASSERT_EQ(replayed.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(replayed[i], t.value(i)) << t.op(i);
}

TEST(Backward, BranchSumGradientIsSumOfBranchGradients) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<float>({1, 2, 5, 5}, rng);
  const auto w1 = random_tensor<float>({2, 2, 3, 3}, rng);
  const auto w2 = random_tensor<float>({2, 2, 3, 3}, rng);
  const Tensor4 bias({1, 2, 1, 1});
  auto grad_of = [&](bool use1, bool use2) {
    Tape<float> t;
    const NodeId xn = t.leaf(x);
    const NodeId b = t.leaf(bias, false);
    std::vector<NodeId> outs;
    if (use1) outs.push_back(ad::conv2d(t, xn, t.leaf(w1, false), b, 1));
    if (use2) outs.push_back(ad::conv2d(t, xn, t.leaf(w2, false), b, 1));
    NodeId y = outs[0];
    if (outs.size() == 2) y = ad::add(t, outs[0], outs[1]);
    return t.backward(ad::sum(t, ad::mul_scalar(t, y, 0.5f)))[xn];
  };
  EXPECT_LE(max_abs_diff(grad_of(true, true), add(grad_of(true, false), grad_of(false, true))), 1e-5f);
}

TEST(FiniteDiff, SumOfSquares) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor<double>({1, 1, 3, 4}, rng);
  const auto report = finite_diff_check(
      [](TapeD& t, NodeId v) {
        const NodeId sq = t.record(
            "square", {v}, [](auto in) { return map(*in[0], [](double a) { return a * a; }); },
            [](auto in, const Tensor<double>&, const Tensor<double>& g) {
              return std::vector<Tensor<double>>{
                  zip(*in[0], g, [](double a, double b) { return 2 * a * b; }, "sq")};
            });
        return ad::sum(t, sq);
      },
      x);
  EXPECT_EQ(report.checked, x.numel());
  EXPECT_LE(report.max_rel_error, 1e-6);
}

TEST(FiniteDiff, L1AwayFromZero) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 2, 3, 3}, rng, 0.5, 1.0);
  const auto target = random_tensor<double>({1, 2, 3, 3}, rng, -1.0, 0.0);
  const auto report = finite_diff_check(
      [&](TapeD& t, NodeId v) { return ad::l1_loss(t, v, t.leaf(target, false)); }, x);
  EXPECT_EQ(report.skipped, 0u);
  EXPECT_LE(report.max_rel_error, 1e-4);
}

TEST(FiniteDiff, L1ZeroResidualIsExcluded) {
  Tensor<double> x({1, 1, 1, 3}, std::vector<double>{0.2, 0.5, -0.3});
  Tensor<double> target({1, 1, 1, 3}, std::vector<double>{0.0, 0.5, 0.1});
  const auto report = finite_diff_check(
      [&](TapeD& t, NodeId v) { return ad::l1_loss(t, v, t.leaf(target, false)); }, x);
  EXPECT_EQ(report.skipped, 1u);
  EXPECT_EQ(report.checked, 2u);
  EXPECT_LE(report.max_rel_error, 1e-6);
}

class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  const auto x = random_tensor<double>({2, 4, 4, 4}, rng);
  const auto w = random_tensor<double>({4, 4, 3, 3}, rng);
  const auto b = random_tensor<double>({1, 4, 1, 1}, rng);
  const std::vector<double> pad_values{0.3, -0.2, 0.1, 0.7};
  std::function<NodeId(TapeD&, NodeId)> body;
  switch (GetParam()) {
    case 0:  // conv, zero padding
      body = [&](TapeD& t, NodeId v) { return ad::conv2d(t, v, t.leaf(w, false), t.leaf(b, false), 1); };
      break;
    case 1:  // conv, constant padding
      body = [&](TapeD& t, NodeId v) {
        return ad::conv2d(t, v, t.leaf(w, false), t.leaf(b, false), 1, pad_values);
      };
      break;
    case 2:
      body = [&](TapeD& t, NodeId v) { return ad::pixel_shuffle(t, v, 2); };
      break;
    case 3:
      body = [&](TapeD& t, NodeId v) { return ad::bicubic_resize(t, v, Scale::up(2)); };
      break;
    case 4:
      body = [&](TapeD& t, NodeId v) { return ad::bicubic_resize(t, v, Scale::down(2)); };
      break;
    case 5:
      body = [&](TapeD& t, NodeId v) { return ad::add(t, v, ad::mul_scalar(t, v, 3.0)); };
      break;
    case 6:
      body = [&](TapeD& t, NodeId v) { return ad::relu(t, v); };
      break;
    case 7:
      body = [&](TapeD& t, NodeId v) { return ad::pad(t, v, 1); };
      break;
    default:
      body = [&](TapeD& t, NodeId v) { return ad::concat_channels(t, {v, ad::relu(t, v)}); };
  }
  std::mt19937_64 probe_rng(7);
  const auto report = finite_diff_check(
      [&](TapeD& t, NodeId v) {
        auto local = probe_rng;
        return probe_loss(t, body(t, v), local);
      },
      x);
  EXPECT_GT(report.checked, x.numel() / 2);
  EXPECT_LE(report.max_rel_error, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient, ::testing::Range(0, 9));

TEST(FiniteDiff, ConvParametersThroughCompositeNet) {
  std::mt19937_64 rng(8);
  const auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  const auto w1 = random_tensor<double>({3, 2, 3, 3}, rng);
  const auto b1 = random_tensor<double>({1, 3, 1, 1}, rng);
  const auto w2 = random_tensor<double>({2, 3, 3, 3}, rng);
  const auto b2 = random_tensor<double>({1, 2, 1, 1}, rng);
  const auto target = random_tensor<double>({1, 2, 5, 5}, rng);
  // Check each parameter tensor by making it the probed leaf. A bias shifts a
  // whole channel, so some of its few coordinates may straddle a kink.
  std::size_t checked = 0;
  for (int which = 0; which < 4; ++which) {
    const auto report = finite_diff_check(
        [&](TapeD& t, NodeId v) {
          const NodeId xn = t.leaf(x, false);
          const NodeId p[4] = {which == 0 ? v : t.leaf(w1, false), which == 1 ? v : t.leaf(b1, false),
                               which == 2 ? v : t.leaf(w2, false), which == 3 ? v : t.leaf(b2, false)};
          const NodeId h = ad::relu(t, ad::conv2d(t, xn, p[0], p[1], 1));
          return ad::l1_loss(t, ad::conv2d(t, h, p[2], p[3], 1), t.leaf(target, false));
        },
        which == 0 ? w1 : which == 1 ? b1 : which == 2 ? w2 : b2);
    checked += report.checked;
    EXPECT_LE(report.max_rel_error, 1e-3) << "parameter " << which;
  }
  EXPECT_GT(checked, 60u);
}
