#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "repcam/metrics.hpp"
#include "test_util.hpp"

using namespace repcam;
using repcam::testing::random_tensor;

TEST(Psnr, ClosedFormCases) {
  const Tensor4 a({1, 3, 8, 8}, 128.0f / 255.0f);
  const Tensor4 b({1, 3, 8, 8}, 129.0f / 255.0f);
  EXPECT_NEAR(psnr(a, b), 20.0 * std::log10(255.0), 1e-3);
  EXPECT_NEAR(psnr(a, b), 48.13, 5e-3);
  EXPECT_EQ(psnr(a, a), kPsnrIdentical);
  const Tensor<double> z({1, 1, 4, 4}, 0.0), t({1, 1, 4, 4}, 0.1);
  EXPECT_NEAR(psnr(z, t), 20.0, 1e-9);
}

TEST(Psnr, SymmetricAndConstantOffset) {
  std::mt19937_64 rng(1);
  const auto a = random_tensor<double>({1, 3, 10, 10}, rng, 0.2, 0.7);
  const auto b = random_tensor<double>({1, 3, 10, 10}, rng, 0.2, 0.7);
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  const double c = 0.05;
  EXPECT_NEAR(psnr(a, map(a, [&](double v) { return v + c; })), -20.0 * std::log10(c), 1e-9);
}

TEST(Psnr, RejectsDimMismatch) {
  EXPECT_THROW(psnr(Tensor4({1, 3, 4, 4}), Tensor4({1, 3, 4, 5})), ShapeError);
}

TEST(Quantize, RoundHalfAwayFromZeroAndClamp) {
  EXPECT_EQ(to_byte(0.5 / 255.0), 1);
  EXPECT_EQ(to_byte(1.5 / 255.0), 2);
  EXPECT_EQ(to_byte(-0.2), 0);
  EXPECT_EQ(to_byte(1.7), 255);
  const Tensor4 x({1, 1, 1, 2}, std::vector<float>{0.1f, 0.5f});
  const auto q = quantize_8bit(x);
  EXPECT_FLOAT_EQ(q.data()[0], 26.0f / 255.0f);
  EXPECT_FLOAT_EQ(q.data()[1], 128.0f / 255.0f);
}

namespace {

// SSIM straight from the definition: 2-D Gaussian weights per window.
double ssim_direct(const Tensor<double>& a, const Tensor<double>& b) {
  const auto& s = a.shape();
  double g1[11], wsum = 0.0;
  for (int i = 0; i < 11; ++i) wsum += (g1[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2 * 1.5 * 1.5)));
  for (auto& v : g1) v /= wsum;
  auto gray = [&](const Tensor<double>& t, std::size_t y, std::size_t x) {
    return (t.at(0, 0, y, x) + t.at(0, 1, y, x) + t.at(0, 2, y, x)) / 3.0;
  };
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + 11 <= s.h; ++y0)
    for (std::size_t x0 = 0; x0 + 11 <= s.w; ++x0) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = g1[i] * g1[j];
          mx += w * gray(a, y0 + i, x0 + j);
          my += w * gray(b, y0 + i, x0 + j);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = g1[i] * g1[j];
          const double dx = gray(a, y0 + i, x0 + j) - mx, dy = gray(b, y0 + i, x0 + j) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          cov += w * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace

TEST(Ssim, IdenticalIsOne) {
  std::mt19937_64 rng(2);
  const auto a = random_tensor<double>({1, 3, 16, 20}, rng, 0.0, 1.0);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, MatchesDirectFormula) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_tensor<double>({1, 3, static_cast<std::size_t>(14 + trial), 17}, rng, 0.0, 1.0);
    auto b = a;
    for (auto& v : b.data()) v = std::clamp(v + 0.2 * (static_cast<double>(rng() % 1000) / 1000.0 - 0.5), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), ssim_direct(a, b), 1e-6);
    EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
  }
}

TEST(Ssim, InvertedBinaryImageIsNegative) {
  std::mt19937_64 rng(4);
  Tensor<double> a({1, 3, 16, 16});
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const double v = static_cast<double>(rng() % 2);
      for (std::size_t c = 0; c < 3; ++c) a.at(0, c, y, x) = v;
    }
  const auto inv = map(a, [](double v) { return 1.0 - v; });
  EXPECT_LT(ssim(a, inv), 0.0);
}

TEST(Ssim, ConstantShiftInvariance) {
  std::mt19937_64 rng(5);
  const auto a = random_tensor<double>({1, 3, 13, 13}, rng, 0.1, 0.6);
  const auto b = random_tensor<double>({1, 3, 13, 13}, rng, 0.1, 0.6);
  auto shift = [](const Tensor<double>& t) { return map(t, [](double v) { return v + 0.3; }); };
  // The luminance term depends on the means, so invariance is approximate.
  EXPECT_NEAR(ssim(shift(a), shift(b)), ssim(a, b), 0.05);
}

TEST(Ssim, RejectsSmallImages) { EXPECT_THROW(ssim(Tensor4({1, 3, 10, 20}), Tensor4({1, 3, 10, 20})), ShapeError); }

TEST(Consistency, Cases) {
  std::mt19937_64 rng(6);
  Tensor4 lr({1, 3, 12, 12});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x)
        lr.at(0, c, y, x) = static_cast<float>(0.5 + 0.3 * std::sin(0.5 * x + 0.3 * y + static_cast<double>(c)));
  EXPECT_EQ(consistency(lr, lr, 1), 0.0);
  const auto up = bicubic_resize(lr, Scale::up(2));
  EXPECT_LE(consistency(lr, up, 2), 1e-2);
  // White noise is the worst case for the round trip.
  const auto noise = random_tensor<float>({1, 3, 12, 12}, rng, 0.0, 1.0);
  EXPECT_LE(consistency(noise, bicubic_resize(noise, Scale::up(2)), 2), 2e-2);
  const auto lifted = map(up, [](float v) { return v + 0.1f; });
  const double base = consistency(lr, up, 2);
  EXPECT_NEAR(consistency(lr, lifted, 2), 0.1 + base, 0.02);
  EXPECT_THROW(consistency(lr, up, 3), ShapeError);
}

TEST(CostReport, ReferenceFormat) {
  const auto r = make_cost_report(DeliveryScheme::shared_model_tvp, {3'620'000}, {270'000}, {0});
  EXPECT_EQ(r.format(), "3.62+0.27 (3.89)");
}

TEST(CostReport, SchemeTotals) {
  const std::vector<std::uint64_t> lr{100, 200, 300};
  const auto per = make_cost_report(DeliveryScheme::per_chunk_models, lr, {50, 60, 70});
  EXPECT_EQ(per.total(), 100u + 200 + 300 + 50 + 60 + 70);
  const auto shared = make_cost_report(DeliveryScheme::shared_model, lr, {50});
  EXPECT_EQ(shared.total(), 650u);
  const auto tvp = make_cost_report(DeliveryScheme::shared_model_tvp, lr, {50}, {4, 5, 6});
  EXPECT_EQ(tvp.total(), 50u + 15 + 600);
  EXPECT_EQ(tvp.model_total(), 65u);
}

TEST(CostReport, NineChunksDifferByEightS) {
  const std::vector<std::uint64_t> lr(9, 400'000);
  const std::uint64_t s = 270'000;
  const auto per = make_cost_report(DeliveryScheme::per_chunk_models, lr, std::vector<std::uint64_t>(9, s));
  const auto shared = make_cost_report(DeliveryScheme::shared_model, lr, {s});
  EXPECT_EQ(per.total() - shared.total(), 8 * s);
  EXPECT_LT(shared.total(), per.total());
}

TEST(CostReport, SingleChunkDegenerate) {
  const auto per = make_cost_report(DeliveryScheme::per_chunk_models, {1234}, {99});
  const auto shared = make_cost_report(DeliveryScheme::shared_model, {1234}, {99});
  EXPECT_EQ(per.total(), shared.total());
}

TEST(CostReport, RejectsInconsistentCounts) {
  EXPECT_THROW(make_cost_report(DeliveryScheme::per_chunk_models, {1, 2}, {3}), ShapeError);
  EXPECT_THROW(make_cost_report(DeliveryScheme::shared_model, {1, 2}, {3, 4}), ShapeError);
  EXPECT_THROW(make_cost_report(DeliveryScheme::shared_model_tvp, {1, 2}, {3}, {1}), ShapeError);
  EXPECT_THROW(make_cost_report(DeliveryScheme::shared_model, {}, {3}), ShapeError);
}
