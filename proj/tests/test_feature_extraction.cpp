#include <gtest/gtest.h>

#include <cstdlib>

#include "test_support.hpp"

using namespace testing_support;

namespace {

const fs::path kData = HISTOSIM_TEST_DATA;

Patch probe_patch(int side) {
  Patch p(side, side, ColorSpace::RGB);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) p.at(c, y, x) = ((x * 7 + y * 3 + c * 11) % 50) / 50.0;
  return p;
}

void expect_load_error(const std::function<void()>& fn) {
  try {
    fn();
    FAIL() << "expected load error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), errc::kLoad) << e.what();
  }
}

}  // namespace

TEST(FeatureExtractionSynthetic, StageShapesAt256) {
  auto ex = load_extractor(synthetic_spec(1234, 8, 256));
  const auto f = ex->extract(textured_patch(256, 256, 1));
  ASSERT_EQ(f.stages.size(), kNumStages);
  const int expect[4][3] = {{8, 64, 64}, {16, 32, 32}, {32, 16, 16}, {64, 8, 8}};
  for (std::size_t l = 0; l < kNumStages; ++l) {
    EXPECT_EQ(f.stages[l].channels, expect[l][0]);
    EXPECT_EQ(f.stages[l].height, expect[l][1]);
    EXPECT_EQ(f.stages[l].width, expect[l][2]);
    EXPECT_EQ(f.stages[l].data.size(), static_cast<std::size_t>(expect[l][0] * expect[l][1] * expect[l][2]));
  }
}

TEST(FeatureExtractionSynthetic, DeterministicAcrossInstances) {
  const auto p = textured_patch(96, 96, 2);
  auto a = load_extractor(synthetic_spec(5, 4, 64));
  auto b = load_extractor(synthetic_spec(5, 4, 64));
  EXPECT_EQ(a->extract(p), b->extract(p));
  EXPECT_EQ(a->extract(p), a->extract(p));
  auto c = load_extractor(synthetic_spec(6, 4, 64));
  EXPECT_NE(a->extract(p), c->extract(p));
}

TEST(FeatureExtractionSynthetic, GrayEqualsReplicatedRgb) {
  auto ex = load_extractor(synthetic_spec(1, 4, 64));
  const auto g = random_patch(64, 64, ColorSpace::GRAY, 3);
  Patch rgb(64, 64, ColorSpace::RGB);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) rgb.at(c, y, x) = g.at(0, y, x);
  EXPECT_EQ(ex->extract(g), ex->extract(rgb));
}

TEST(FeatureExtractionSynthetic, BlackPatchIsFinite) {
  auto ex = load_extractor(synthetic_spec());
  const auto f = ex->extract(constant_patch(256, 256, ColorSpace::RGB, 0.0));
  for (const auto& s : f.stages)
    for (double v : s.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(FeatureExtractionSynthetic, WrongStageCountOrNameIsLoadError) {
  auto s = synthetic_spec();
  s.stage_names.pop_back();
  expect_load_error([&] { load_extractor(s); });
  s = synthetic_spec();
  s.stage_names[2] = "layer3";
  expect_load_error([&] { load_extractor(s); });
}

TEST(FeatureExtractionResize, MatchesOpenCvBilinear) {
  const auto p = random_patch(37, 23, ColorSpace::GRAY, 4);
  cv::Mat src(23, 37, CV_64F);
  for (int y = 0; y < 23; ++y)
    for (int x = 0; x < 37; ++x) src.at<double>(y, x) = p.at(0, y, x);
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(64, 64), 0, 0, cv::INTER_LINEAR);
  const auto r = resize_bilinear(p, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) EXPECT_NEAR(r.at(0, y, x), dst.at<double>(y, x), 1e-6);
}

TEST(FeatureExtractionOnnx, SidecarLoadsWithExpectedShapes) {
  auto ex = load_extractor(kData / "tiny_backbone.json");
  const auto f = ex->extract(textured_patch(64, 64, 7));
  const int expect[4][3] = {{4, 16, 16}, {8, 8, 8}, {16, 4, 4}, {32, 2, 2}};
  ASSERT_EQ(f.stages.size(), kNumStages);
  for (std::size_t l = 0; l < kNumStages; ++l) {
    EXPECT_EQ(f.stages[l].channels, expect[l][0]);
    EXPECT_EQ(f.stages[l].height, expect[l][1]);
    EXPECT_EQ(f.stages[l].width, expect[l][2]);
  }
}

TEST(FeatureExtractionOnnx, MatchesNumpyReferenceActivations) {
  // Reference produced by a plain numpy convolution in tools/make_tiny_onnx.py.
  const auto ref = nlohmann::json::parse(read_file(kData / "tiny_backbone_expected.json"));
  auto ex = load_extractor(kData / "tiny_backbone.json");
  const auto f = ex->extract(probe_patch(64));
  for (std::size_t l = 0; l < kNumStages; ++l) {
    const auto& js = ref["stages"][l];
    const auto shape = js["shape"].get<std::vector<int>>();
    ASSERT_EQ(f.stages[l].channels, shape[0]);
    ASSERT_EQ(f.stages[l].height, shape[1]);
    const auto data = js["data"].get<std::vector<double>>();
    ASSERT_EQ(data.size(), f.stages[l].data.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
      worst = std::max(worst, std::abs(data[i] - f.stages[l].data[i]) / (1.0 + std::abs(data[i])));
    EXPECT_LE(worst, 1e-4) << "stage " << l + 1;  // single-precision inference
  }
}

TEST(FeatureExtractionOnnx, MissingStageIsLoadError) {
  auto s = load_extractor_spec(kData / "tiny_backbone.json");
  s.stage_names[3] = "no_such_layer";
  expect_load_error([&] { load_extractor(s); });
}

TEST(FeatureExtractionOnnx, MissingModelFileIsLoadError) {
  TempDir dir("fe_missing");
  write_file_atomic(dir / "m.json",
                    R"({"model_path":"absent.onnx","stage_names":["a","b","c","d"]})");
  expect_load_error([&] { load_extractor(dir / "m.json"); });
  write_file_atomic(dir / "bad.json", R"({"model_path":"absent.onnx","stage_names":["a","b","c"]})");
  expect_load_error([&] { load_extractor_spec(dir / "bad.json"); });
  write_file_atomic(dir / "junk.json", "{oops");
  expect_load_error([&] { load_extractor_spec(dir / "junk.json"); });
}

TEST(FeatureExtractionOnnx, ModelDirEnvironmentOverridesSidecarDir) {
  TempDir dir("fe_env");
  fs::copy_file(kData / "tiny_backbone.json", dir / "tiny_backbone.json");
  const auto rel = load_extractor_spec(dir / "tiny_backbone.json");
  EXPECT_EQ(fs::path(rel.model_path), dir.path() / "tiny_backbone.onnx");
  ::setenv("HISTOSIM_MODEL_DIR", kData.c_str(), 1);
  const auto env = load_extractor_spec(dir / "tiny_backbone.json");
  ::unsetenv("HISTOSIM_MODEL_DIR");
  EXPECT_EQ(fs::path(env.model_path), kData / "tiny_backbone.onnx");
  EXPECT_NO_THROW(load_extractor(env));
}
