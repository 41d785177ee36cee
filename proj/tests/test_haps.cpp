#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace testing_support;

namespace {

/// Regularized cross-entropy for one feature, written out independently of the library.
double toy_objective(const std::vector<double>& x, const std::vector<int>& y, double w, double b, double l2) {
  double f = 0.5 * l2 * w * w;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = w * x[i] + b;
    f += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - y[i] * z;
  }
  return f;
}

/// Coarse-to-fine grid search over (w, b).
std::pair<double, double> grid_minimize(const std::vector<double>& x, const std::vector<int>& y, double l2) {
  double bw = 0, bb = 0, step = 0.25, span = 40.0;
  for (int round = 0; round < 6; ++round) {
    double best = std::numeric_limits<double>::infinity(), nw = bw, nb = bb;
    for (double w = bw - span; w <= bw + span; w += step)
      for (double b = bb - span; b <= bb + span; b += step) {
        const double f = toy_objective(x, y, w, b, l2);
        if (f < best) best = f, nw = w, nb = b;
      }
    bw = nw;
    bb = nb;
    span = 4 * step;
    step /= 8;
  }
  return {bw, bb};
}

struct FourFeatureSet {
  std::vector<LayerDistances> d;
  std::vector<BinaryClass> y;
};

/// Separable set: feature 2 below 0.6 marks Acceptable; the rest is noise.
FourFeatureSet separable_set(int n, std::uint64_t seed) {
  Rng rng(seed);
  FourFeatureSet s;
  for (int i = 0; i < n; ++i) {
    LayerDistances d;
    const bool good = i % 2 == 0;
    for (auto& v : d.d) v = rng.uniform(0.0, 1.2);
    d.d[1] = good ? rng.uniform(0.1, 0.5) : rng.uniform(0.7, 1.1);
    s.d.push_back(d);
    s.y.push_back(good ? BinaryClass::Acceptable : BinaryClass::Bad);
  }
  return s;
}

}  // namespace

TEST(HapsLogit, DegenerateHeadAndArithmetic) {
  HapsHead h;
  h.b = 0.7;
  EXPECT_DOUBLE_EQ(haps_logit(LayerDistances{{0.3, 1.2, 0.1, 1.9}}, h), 0.7);
  EXPECT_DOUBLE_EQ(haps_logit(LayerDistances{}, h), 0.7);
  h.w = {-1, -1, -1, -1};
  h.b = 4;
  EXPECT_DOUBLE_EQ(haps_logit(LayerDistances{{2, 2, 2, 2}}, h), -4.0);
  EXPECT_DOUBLE_EQ(haps_distance(LayerDistances{{2, 2, 2, 2}}, h), 4.0);
}

TEST(HapsHeadFile, JsonRoundTripIsBitExact) {
  TempDir dir("haps_json");
  HapsHead h;
  h.w = {-0.1234567890123456789, 3.0e-17, -2.5, 1.0 / 3.0};
  h.b = std::nextafter(1.0, 2.0);
  h.trained_on = "train.jsonl|0|gray|0|0|0|0";
  h.created_at = "2026-01-01T00:00:00Z";
  save_head(h, dir / "h.json");
  EXPECT_EQ(load_head(dir / "h.json"), h);
}

TEST(HapsHeadFile, RejectsBadContent) {
  TempDir dir("haps_bad");
  write_file_atomic(dir / "a.json", R"({"w":[1,2,3],"b":0})");
  EXPECT_THROW(load_head(dir / "a.json"), Error);
  write_file_atomic(dir / "b.json", R"({"w":[1,2,3,4],"b":0,"positive_class":"Bad"})");
  EXPECT_THROW(load_head(dir / "b.json"), Error);
  write_file_atomic(dir / "c.json", "not json");
  EXPECT_THROW(load_head(dir / "c.json"), Error);
}

TEST(HapsCalibration, OneFeatureToyMatchesGridSearch) {
  std::vector<double> x;
  std::vector<int> y;
  Rng rng(11);
  for (int i = 0; i < 40; ++i) {
    // Margin around the 0.5 boundary so the penalized fit still separates.
    const double v = i % 2 ? rng.uniform(0.0, 0.4) : rng.uniform(0.6, 1.0);
    x.push_back(v);
    y.push_back(v < 0.5 ? 1 : 0);
  }
  LogisticOptions opt;
  opt.l2 = 1.0;
  const auto fit = fit_logistic(x, y, 1, opt);
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(fit.w[0], 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(fit.w[0] * x[i] + fit.b > 0.0, y[i] == 1);
  const auto [gw, gb] = grid_minimize(x, y, 1.0);
  EXPECT_NEAR(fit.w[0], gw, 1e-3);
  EXPECT_NEAR(fit.b, gb, 1e-3);
  EXPECT_LE(toy_objective(x, y, fit.w[0], fit.b, 1.0), toy_objective(x, y, gw, gb, 1.0) + 1e-9);
}

TEST(HapsCalibration, LabelFlipNegatesHead) {
  const auto s = separable_set(60, 2);
  std::vector<BinaryClass> flipped;
  for (auto c : s.y) flipped.push_back(c == BinaryClass::Acceptable ? BinaryClass::Bad : BinaryClass::Acceptable);
  const auto a = calibrate(s.d, s.y, 1.0), b = calibrate(s.d, flipped, 1.0);
  for (std::size_t l = 0; l < kNumStages; ++l) EXPECT_NEAR(a.head.w[l], -b.head.w[l], 1e-5);
  EXPECT_NEAR(a.head.b, -b.head.b, 1e-5);
  for (const auto& d : s.d) EXPECT_NEAR(haps_logit(d, a.head), -haps_logit(d, b.head), 1e-5);
}

TEST(HapsCalibration, DuplicatedRowsWithScaledPenaltyGiveSameHead) {
  auto s = separable_set(40, 3);
  const auto a = calibrate(s.d, s.y, 1.0);
  auto d2 = s.d;
  auto y2 = s.y;
  d2.insert(d2.end(), s.d.begin(), s.d.end());
  y2.insert(y2.end(), s.y.begin(), s.y.end());
  const auto b = calibrate(d2, y2, 2.0);
  for (std::size_t l = 0; l < kNumStages; ++l) EXPECT_NEAR(a.head.w[l], b.head.w[l], 1e-5);
  EXPECT_NEAR(a.head.b, b.head.b, 1e-5);
}

TEST(HapsCalibration, ConvexRestartsAgree) {
  const auto s = separable_set(500, 4);
  const auto a = calibrate(s.d, s.y, 1.0, 5000);
  const auto b = calibrate(s.d, s.y, 1.0, 5000, std::array<double, 5>{5, -5, 3, -2, 10});
  ASSERT_TRUE(a.converged);
  ASSERT_TRUE(b.converged);
  for (std::size_t l = 0; l < kNumStages; ++l) EXPECT_NEAR(a.head.w[l], b.head.w[l], 1e-4);
  EXPECT_NEAR(a.head.b, b.head.b, 1e-4);
  EXPECT_LT(a.head.w[1], 0.0);
  int correct = 0;
  for (std::size_t i = 0; i < s.d.size(); ++i)
    correct += (haps_logit(s.d[i], a.head) > 0.0) == (s.y[i] == BinaryClass::Acceptable);
  EXPECT_EQ(correct, 500);
}

TEST(HapsCalibration, SingleClassIsError) {
  auto s = separable_set(10, 5);
  std::fill(s.y.begin(), s.y.end(), BinaryClass::Bad);
  try {
    calibrate(s.d, s.y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), errc::kSingleClass);
  }
  EXPECT_THROW(calibrate(s.d, s.y, -1.0), Error);
}

TEST(HapsCalibration, IterationCapReportsNonConvergence) {
  const auto s = separable_set(100, 6);
  const auto r = calibrate(s.d, s.y, 1e-6, 2);
  EXPECT_FALSE(r.converged);
  EXPECT_GT(r.grad_norm, 1e-6);
  EXPECT_EQ(r.iterations, 2);
}

TEST(HapsScorePair, IdentityPairGivesIntercept) {
  auto ex = load_extractor(synthetic_spec());
  HapsHead h;
  h.w = {-3, 2, -1, 0.5};
  h.b = 1.25;
  const auto p = textured_patch(256, 256, 8);
  for (const char* code : {"0|rgb|0|0|0|0", "0|gray|0|0|1|0"})
    EXPECT_NEAR(haps_score_pair(p, p, parse_config(code), *ex, h), 1.25, 1e-5) << code;
  // Histogram matching is a 256-bin quantile map, so self-matching is only
  // approximately the identity. Hematoxylin features have tiny channel
  // variances, where the Pearson eps keeps self-distances visibly above zero.
  for (const char* code : {"0|gray|0|1|0|0", "1|hed|1|0|0|1", "1|hed|1|1|0|1"})
    EXPECT_NEAR(haps_score_pair(p, p, parse_config(code), *ex, h), 1.25, 0.1) << code;
}

TEST(HapsScorePair, DeterministicAndSymmetricWithoutHistMatch) {
  auto ex = load_extractor(synthetic_spec());
  HapsHead h;
  h.w = {-1, -2, -3, -4};
  h.b = 2;
  const auto cfg = parse_config("0|gray|0|0|0|0");
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto a = textured_patch(256, 256, s), b = textured_patch(256, 256, s + 40);
    const double ab = haps_score_pair(a, b, cfg, *ex, h);
    EXPECT_EQ(ab, haps_score_pair(a, b, cfg, *ex, h));
    EXPECT_NEAR(ab, haps_score_pair(b, a, cfg, *ex, h), 1e-6);
  }
}
