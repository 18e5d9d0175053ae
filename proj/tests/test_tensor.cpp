#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "repcam/tensor.hpp"
#include "test_util.hpp"

using namespace repcam;
using repcam::testing::random_tensor;

namespace {

// Six nested loops, no im2col, double accumulation.
Tensor4 naive_conv(const Tensor4& x, const ConvKernel<float>& k, std::size_t p,
                   std::span<const float> pad_values = {}) {
  const auto& s = x.shape();
  const std::size_t K = k.size();
  const std::size_t ho = s.h + 2 * p - K + 1;
  const std::size_t wo = s.w + 2 * p - K + 1;
  Tensor4 out({s.n, k.out_channels(), ho, wo});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < k.out_channels(); ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          double acc = k.bias.data()[o];
          for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t u = 0; u < K; ++u)
              for (std::size_t v = 0; v < K; ++v) {
                const long iy = static_cast<long>(y + u) - static_cast<long>(p);
                const long ix = static_cast<long>(xx + v) - static_cast<long>(p);
                double val;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w))
                  val = pad_values.empty() ? 0.0 : pad_values[c];
                else
                  val = x.at(n, c, iy, ix);
                acc += val * k.weight.at(o, c, u, v);
              }
          out.at(n, o, y, xx) = static_cast<float>(acc);
        }
  return out;
}

// Scalar Keys cubic interpolation straight from the definition.
double ref_cubic(double t) {
  const double a = -0.5;
  t = std::fabs(t);
  if (t <= 1) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
  if (t < 2) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
  return 0;
}

double ref_sample(const Tensor4& x, std::size_t c, double sy, double sx) {
  const long h = static_cast<long>(x.shape().h);
  const long w = static_cast<long>(x.shape().w);
  double acc = 0;
  const long by = static_cast<long>(std::floor(sy));
  const long bx = static_cast<long>(std::floor(sx));
  for (long i = by - 1; i <= by + 2; ++i)
    for (long j = bx - 1; j <= bx + 2; ++j) {
      const long yi = std::clamp(i, 0L, h - 1);
      const long xj = std::clamp(j, 0L, w - 1);
      acc += ref_cubic(sy - i) * ref_cubic(sx - j) * x.at(0, c, yi, xj);
    }
  return acc;
}

}  // namespace

TEST(Conv2d, AllOnesCountsInImageTaps) {
  Tensor4 x({1, 1, 3, 3}, 1.0f);
  ConvKernel<float> k(Tensor4({1, 1, 3, 3}, 1.0f), Tensor4({1, 1, 1, 1}));
  const auto y = conv2d(x, k, 1);
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 1), 9.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 2, 2), 4.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 1), 6.0f);
}

TEST(Conv2d, IdentityOneByOne) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<float>({2, 3, 4, 5}, rng);
  auto k = ConvKernel<float>::zeros(3, 3, 1);
  for (std::size_t c = 0; c < 3; ++c) k.weight.at(c, c, 0, 0) = 1.0f;
  EXPECT_EQ(conv2d(x, k, 0), x);
}

TEST(Conv2d, MatchesNaiveLoopOracle) {
  std::mt19937_64 rng(7);
  const auto x = random_tensor<float>({2, 3, 5, 5}, rng);
  ConvKernel<float> k(random_tensor<float>({4, 3, 3, 3}, rng), random_tensor<float>({1, 4, 1, 1}, rng));
  EXPECT_LE(max_abs_diff(conv2d(x, k, 1), naive_conv(x, k, 1)), 1e-6f);
}

TEST(Conv2d, RandomCasesIncludingConstantPadding) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = (trial % 2) ? 3 : 1;
    const std::size_t p = (trial % 4 == 3) ? 0 : (K - 1) / 2;
    const std::size_t c2 = dim(rng), c1 = dim(rng);
    const std::size_t h = std::max<std::size_t>(dim(rng), K), w = std::max<std::size_t>(dim(rng), K);
    const auto x = random_tensor<float>({1 + trial % 2u, c2, h, w}, rng);
    ConvKernel<float> k(random_tensor<float>({c1, c2, K, K}, rng),
                        random_tensor<float>({1, c1, 1, 1}, rng));
    std::vector<float> pv;
    if (trial % 3 == 0) {
      const auto t = random_tensor<float>({1, c2, 1, 1}, rng);
      pv.assign(t.data().begin(), t.data().end());
    }
    ASSERT_LE(max_abs_diff(conv2d(x, k, p, std::span<const float>(pv)), naive_conv(x, k, p, pv)),
              1e-5f)
        << "trial " << trial;
  }
}

TEST(Conv2d, OneByOneIsPerPixelMatmul) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<float>({1, 4, 3, 3}, rng);
  ConvKernel<float> k(random_tensor<float>({2, 4, 1, 1}, rng), random_tensor<float>({1, 2, 1, 1}, rng));
  const auto y = conv2d(x, k, 0);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = k.bias.data()[o];
        for (std::size_t c = 0; c < 4; ++c) acc += k.weight.at(o, c, 0, 0) * x.at(0, c, i, j);
        EXPECT_NEAR(y.at(0, o, i, j), acc, 1e-5);
      }
}

TEST(Conv2d, RejectsChannelMismatchAndEvenKernel) {
  Tensor4 x({1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, ConvKernel<float>::zeros(1, 3, 3), 1), ShapeError);
  EXPECT_THROW(conv2d(x, ConvKernel<float>::zeros(1, 2, 2), 0), ShapeError);
  EXPECT_THROW(conv2d(x, ConvKernel<float>::zeros(1, 2, 3), 2), ShapeError);
}

TEST(PixelShuffle, DefinitionAndIdentity) {
  Tensor4 x({1, 4, 1, 1}, std::vector<float>{1, 2, 3, 4});
  const auto y = pixel_shuffle(x, 2);
  EXPECT_EQ(y.shape(), (Shape4{1, 1, 2, 2}));
  EXPECT_EQ(y.vec(), (std::vector<float>{1, 2, 3, 4}));
  std::mt19937_64 rng(3);
  const auto z = random_tensor<float>({2, 3, 4, 4}, rng);
  EXPECT_EQ(pixel_shuffle(z, 1), z);
  EXPECT_THROW(pixel_shuffle(Tensor4({1, 3, 2, 2}), 2), ShapeError);
}

TEST(PixelShuffle, InverseRecoversAndPreservesMultiset) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor<float>({2, 8, 3, 3}, rng);
  const auto y = pixel_shuffle(x, 2);
  EXPECT_EQ(y.shape(), (Shape4{2, 2, 6, 6}));
  auto a = x.vec(), b = y.vec();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(pixel_unshuffle(y, 2), x);
}

TEST(Bicubic, PreservesConstants) {
  for (Scale s : {Scale(1, 4), Scale(1, 3), Scale(1, 2), Scale(2, 1), Scale(3, 1), Scale(4, 1)}) {
    Tensor4 x({1, 2, 12, 24}, 0.37f);
    const auto y = bicubic_resize(x, s);
    for (float v : y.data()) ASSERT_NEAR(v, 0.37f, 1e-6f);
  }
}

TEST(Bicubic, RoundTripOnRampWithinBound) {
  Tensor4 x({1, 1, 32, 32});
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) x.at(0, 0, i, j) = static_cast<float>(i + j) / 62.0f;
  const auto back = bicubic_resize(bicubic_resize(x, Scale::up(2)), Scale::down(2));
  EXPECT_LE(max_abs_diff(back, x), 0.02f);
}

TEST(Bicubic, CheckerboardMatchesScalarOracle) {
  Tensor4 x({1, 1, 2, 2}, std::vector<float>{1, 0, 0, 1});
  const auto y = bicubic_resize(x, Scale::up(2));
  ASSERT_EQ(y.shape(), (Shape4{1, 1, 4, 4}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(y.at(0, 0, i, j), ref_sample(x, 0, (i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5), 1e-6);
}

TEST(Bicubic, RandomImagesMatchScalarOracle) {
  std::mt19937_64 rng(21);
  const auto x = random_tensor<float>({1, 1, 9, 6}, rng);
  for (Scale s : {Scale(1, 3), Scale(3, 1)}) {
    const auto y = bicubic_resize(x, s);
    const double inv = 1.0 / s.value();
    for (std::size_t i = 0; i < y.shape().h; ++i)
      for (std::size_t j = 0; j < y.shape().w; ++j)
        EXPECT_NEAR(y.at(0, 0, i, j), ref_sample(x, 0, (i + 0.5) * inv - 0.5, (j + 0.5) * inv - 0.5),
                    1e-5);
  }
}

TEST(Bicubic, Linearity) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor<float>({1, 3, 8, 8}, rng);
  const auto b = random_tensor<float>({1, 3, 8, 8}, rng);
  const float alpha = 0.7f, beta = -1.3f;
  const auto lhs = bicubic_resize(add(mul_scalar(a, alpha), mul_scalar(b, beta)), Scale::up(3));
  const auto rhs = add(mul_scalar(bicubic_resize(a, Scale::up(3)), alpha),
                       mul_scalar(bicubic_resize(b, Scale::up(3)), beta));
  EXPECT_LE(max_abs_diff(lhs, rhs), 1e-5f);
}

TEST(Bicubic, RejectsNonIntegralTarget) {
  EXPECT_THROW(bicubic_resize(Tensor4({1, 1, 5, 4}), Scale::down(2)), ShapeError);
  EXPECT_THROW(bicubic_resize(Tensor4({1, 1, 6, 6}), Scale(3, 2)), ShapeError);
}

TEST(Elementwise, Basics) {
  Tensor4 x({1, 1, 1, 3}, std::vector<float>{-0.5f, 0.3f, 1.7f});
  EXPECT_EQ(add(x, Tensor4(x.shape())), x);
  EXPECT_EQ(clamp01(x).vec(), (std::vector<float>{0.0f, 0.3f, 1.0f}));
  EXPECT_EQ(relu(Tensor4({1, 1, 1, 2}, std::vector<float>{-1, 2})).vec(), (std::vector<float>{0, 2}));
  EXPECT_THROW(add(x, Tensor4({1, 1, 3, 1})), ShapeError);
}
