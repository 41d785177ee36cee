#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"

using namespace testing_support;
using namespace oracles;

TEST(ClassicalMetricsPsnr, ClosedForms) {
  const auto p = random_patch(16, 16, ColorSpace::RGB, 1);
  EXPECT_EQ(psnr(p, p), 100.0);
  EXPECT_NEAR(psnr(constant_patch(8, 8, ColorSpace::GRAY, 0.0), constant_patch(8, 8, ColorSpace::GRAY, 1.0)), 0.0, 1e-12);
  EXPECT_NEAR(psnr(constant_patch(8, 8, ColorSpace::GRAY, 0.3), constant_patch(8, 8, ColorSpace::GRAY, 0.4)), 20.0, 1e-9);
  EXPECT_THROW(psnr(p, random_patch(8, 16, ColorSpace::RGB, 1)), Error);
}

TEST(ClassicalMetricsNcc, AffineAndOracle) {
  Rng rng(3);
  Patch x(20, 20, ColorSpace::GRAY), y(20, 20, ColorSpace::GRAY), z(20, 20, ColorSpace::GRAY);
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    x.values()[i] = 0.4 * rng.uniform();
    y.values()[i] = 2.0 * x.values()[i] + 0.1;
    z.values()[i] = 1.0 - x.values()[i];
  }
  EXPECT_NEAR(ncc(x, y), 1.0, 1e-6);
  EXPECT_NEAR(ncc(x, z), -1.0, 1e-6);
  EXPECT_EQ(ncc(x, constant_patch(20, 20, ColorSpace::GRAY, 0.5)), 0.0);

  const auto a = random_patch(13, 11, ColorSpace::RGB, 4), b = random_patch(13, 11, ColorSpace::RGB, 5);
  const auto va = a.values(), vb = b.values();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < va.size(); ++i) ma += va[i], mb += vb[i];
  ma /= va.size();
  mb /= vb.size();
  double cov = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    cov += (va[i] - ma) * (vb[i] - mb);
    sa += (va[i] - ma) * (va[i] - ma);
    sb += (vb[i] - mb) * (vb[i] - mb);
  }
  EXPECT_NEAR(ncc(a, b), cov / std::sqrt(sa * sb), 1e-12);
}

TEST(ClassicalMetricsMi, SelfIsEntropyAndSymmetric) {
  const auto x = random_patch(64, 64, ColorSpace::GRAY, 7);
  std::vector<double> h(64, 0.0);
  for (double v : x.values()) h[std::min(63, static_cast<int>(v * 64))] += 1;
  double ent = 0.0;
  for (double c : h)
    if (c > 0) ent -= c / 4096.0 * std::log2(c / 4096.0);
  EXPECT_NEAR(mutual_information(x, x), ent, 1e-9);
  EXPECT_NEAR(histogram_entropy(x), ent, 1e-12);
  const auto y = random_patch(64, 64, ColorSpace::GRAY, 8);
  EXPECT_NEAR(mutual_information(x, y), mutual_information(y, x), 1e-12);
  EXPECT_GE(mutual_information(x, x), mutual_information(x, y));
}

TEST(ClassicalMetricsMi, IndependentNoiseIsSmall) {
  const auto x = random_patch(256, 256, ColorSpace::GRAY, 9), y = random_patch(256, 256, ColorSpace::GRAY, 10);
  const double mi = mutual_information(x, y);
  EXPECT_GE(mi, 0.0);
  EXPECT_LE(mi, 0.1);
}

TEST(ClassicalMetricsSsim, IdentitySymmetryAndWindowCheck) {
  const auto a = random_patch(40, 40, ColorSpace::GRAY, 1), b = random_patch(40, 40, ColorSpace::GRAY, 2);
  EXPECT_EQ(ssim(a, a, 7), 1.0);
  EXPECT_NEAR(ssim(a, b, 7), ssim(b, a, 7), 1e-12);
  EXPECT_NEAR(ssim(a, b, 31), ssim(b, a, 31), 1e-12);
  EXPECT_THROW(ssim(a, b, 41), Error);
  EXPECT_THROW(ssim(a, b, 8), Error);
}

TEST(ClassicalMetricsSsim, ConstantOffsetLuminanceClosedForm) {
  const double m1 = 0.3, m2 = 0.4, c1 = 1e-4;
  const double expect = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
  EXPECT_NEAR(ssim(constant_patch(32, 32, ColorSpace::GRAY, m1), constant_patch(32, 32, ColorSpace::GRAY, m2), 7),
              expect, 1e-12);
}

TEST(ClassicalMetricsSsim, MatchesDirectWindowOracle) {
  const auto a = random_patch(24, 20, ColorSpace::GRAY, 3), b = random_patch(24, 20, ColorSpace::GRAY, 4);
  std::vector<double> va(a.values().begin(), a.values().end()), vb(b.values().begin(), b.values().end());
  EXPECT_NEAR(ssim(a, b, 7), oracle_ssim_plane(va, vb, 24, 20, 7).ssim, 1e-12);
}

TEST(ClassicalMetricsMsSsim, MatchesUnrolledOracle) {
  const auto a = random_patch(256, 256, ColorSpace::GRAY, 21);
  auto b = a;
  Rng rng(5);
  for (auto& v : b.values()) v = std::clamp(v + 0.2 * (rng.uniform() - 0.5), 0.0, 1.0);
  EXPECT_LE(std::abs(ms_ssim(a, b) - oracle_ms_ssim_gray(a, b)), 1e-9);
  EXPECT_EQ(ms_ssim(a, a), 1.0);
  EXPECT_LE(ms_ssim(a, b), 1.0);
}

TEST(ClassicalMetricsMsSsim, TooSmallIsError) {
  const auto a = random_patch(175, 200, ColorSpace::GRAY, 1);
  EXPECT_THROW(ms_ssim(a, a), Error);
}

TEST(ClassicalMetricsAll, SymmetricOnRandomPairs) {
  const auto a = random_patch(64, 64, ColorSpace::GRAY, 31), b = random_patch(64, 64, ColorSpace::GRAY, 32);
  EXPECT_NEAR(psnr(a, b), psnr(b, a), 1e-9);
  EXPECT_NEAR(ncc(a, b), ncc(b, a), 1e-9);
  EXPECT_NEAR(mutual_information(a, b), mutual_information(b, a), 1e-9);
  EXPECT_NEAR(ssim(a, b, 31), ssim(b, a, 31), 1e-9);
  EXPECT_NEAR(fsim(a, b), fsim(b, a), 1e-9);
}
