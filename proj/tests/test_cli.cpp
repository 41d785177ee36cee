#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace testing_support;

namespace {

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST(CliFilter, ScoreThenFilterKeepsSix) {
  TempDir dir("cli_filter");
  write_pair_dataset(dir / "data", 8, 2);
  const auto m = dir / "data" / "manifest.jsonl";
  auto r = run_cli("score --manifest " + q(m) + " --metric psnr --out " + q(dir / "s.csv"), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "s.csv"), 9u);
  r = run_cli("filter --manifest " + q(m) + " --metric psnr --scores " + q(dir / "s.csv") +
                  " --fraction 0.25 --out " + q(dir / "kept.jsonl") + " --report " + q(dir / "drops.jsonl"),
              dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "kept.jsonl"), 6u);
  EXPECT_EQ(count_lines(dir / "drops.jsonl"), 2u);
  // Survivor image paths must still resolve from the output location.
  const auto kept = load_manifest(dir / "kept.jsonl");
  for (const auto& rec : kept.records) EXPECT_TRUE(fs::exists(kept.resolve(rec.he_path))) << rec.he_path;
}

TEST(CliScore, JsonlOutputCarriesScores) {
  TempDir dir("cli_score");
  write_pair_dataset(dir / "data", 4, 2);
  const auto r = run_cli("--threads 2 score --manifest " + q(dir / "data" / "manifest.jsonl") +
                             " --metric ssim_w7 --config \"0|gray|0|0|0|0\" --out " + q(dir / "o.jsonl"),
                         dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = load_manifest(dir / "o.jsonl");
  ASSERT_EQ(m.size(), 4u);
  for (const auto& rec : m.records) EXPECT_TRUE(std::isfinite(rec.metric_scores.at("ssim_w7")));
}

TEST(CliEval, ByteIdenticalAcrossRuns) {
  TempDir dir("cli_eval");
  write_pair_dataset(dir / "data", 20, 5);
  const auto base = "eval --manifest " + q(dir / "data" / "manifest.jsonl") + " --metric ncc --bootstrap 200 --seed 9";
  ASSERT_EQ(run_cli(base + " --out " + q(dir / "a.csv"), dir.path()).code, 0);
  ASSERT_EQ(run_cli("--threads 3 " + base + " --out " + q(dir / "b.csv"), dir.path()).code, 0);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(count_lines(dir / "a.csv"), 2u);
}

TEST(CliErrors, StructuredJsonAndExitCodes) {
  TempDir dir("cli_err");
  auto r = run_cli("eval --manifest " + q(dir / "absent.jsonl") + " --metric ncc --out " + q(dir / "x.csv"), dir.path());
  EXPECT_EQ(r.code, 1);
  auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"], "io-error");
  EXPECT_TRUE(j.contains("message"));

  r = run_cli("frobnicate", dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "usage-error");

  write_pair_dataset(dir / "data", 4, 2);
  r = run_cli("score --manifest " + q(dir / "data" / "manifest.jsonl") + " --metric lpips_avg --out " + q(dir / "y.csv"),
              dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "invalid-argument");
}

TEST(CliSplit, WritesDisjointManifests) {
  TempDir dir("cli_split");
  write_pair_dataset(dir / "data", 20, 10);
  const auto r = run_cli("split --manifest " + q(dir / "data" / "manifest.jsonl") + " --ratio 0.8 --seed 3 --out-train " +
                             q(dir / "train.jsonl") + " --out-test " + q(dir / "test.jsonl"),
                         dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "train.jsonl"), 16u);
  EXPECT_EQ(count_lines(dir / "test.jsonl"), 4u);
}

TEST(CliCalibrate, SyntheticModelProducesLoadableHead) {
  TempDir dir("cli_cal");
  write_pair_dataset(dir / "data", 10, 2);
  const auto r = run_cli("calibrate --manifest " + q(dir / "data" / "manifest.jsonl") +
                             " --model synthetic --out " + q(dir / "head.json"),
                         dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto h = load_head(dir / "head.json");
  EXPECT_NE(h.trained_on.find("manifest.jsonl"), std::string::npos);
  EXPECT_FALSE(h.created_at.empty());
}

TEST(CliRobustness, CurvesAndIndices) {
  TempDir dir("cli_rob");
  fs::create_directories(dir / "patches");
  for (int i = 0; i < 3; ++i) save_patch(textured_patch(64, 64, i), dir / "patches" / ("p" + std::to_string(i) + ".png"));
  const auto r = run_cli("robustness --patches " + q(dir / "patches") + " --metrics psnr,ssim_w7 --out " +
                             q(dir / "curves.csv") + " --indices " + q(dir / "idx.csv") + " --plot " + q(dir / "plots"),
                         dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "curves.csv"), 1u + 2 * 16);
  EXPECT_EQ(count_lines(dir / "idx.csv"), 1u + 2 * 3);
  EXPECT_TRUE(fs::exists(dir / "plots" / "shift.png"));
}
