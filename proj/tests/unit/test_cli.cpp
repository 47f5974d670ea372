#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "run_config.hpp"
#include "stemgan/error.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using stemgan::cli::RunConfig;
using stemgan::cli::run;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small enough that train + score run in well under a second.
void write_tiny_config(const fs::path& file, const fs::path& out) {
  std::ofstream os(file);
  os << "output:\n  dir: " << out.string() << "\n"
     << "model:\n  frame_size: 16\n  width_scale: 0.25\n  encoder_stages: 2\n  decoder_stages: 2\n"
     << "  attention_reduction: 4\n  input_frames: 2\n  disc_width_scale: 0.125\n  disc_stages: 2\n"
     << "dataset:\n  window: 3\n"
     << "synth:\n  frame_size: 16\n  object_size: 4\n  train_clips: 1\n  train_clip_length: 16\n"
     << "  test_clips: 2\n  test_clip_length: 16\n  anomaly_start: 6\n  anomaly_length: 5\n"
     << "train:\n  batch_size: 4\n  max_epochs: 1\n";
}

struct CliFixture : ::testing::Test {
  TempDir dir{"cli"};
  fs::path cfg = dir / "run.yaml";
  fs::path out = dir / "out";
  void SetUp() override {
    spdlog::set_level(spdlog::level::warn);
    write_tiny_config(cfg, out);
  }
  int call(std::vector<std::string> args) {
    args.insert(args.begin() + 1, {"-q", "-c", cfg.string()});
    return run(args);
  }
};

}  // namespace

TEST(RunConfig, DefaultsResolveAndValidate) {
  const RunConfig rc = RunConfig::resolve(std::nullopt, {});
  EXPECT_EQ(rc.get("dataset.window"), "5");
  EXPECT_EQ(rc.model().generator.input_frames, 4u);
  EXPECT_DOUBLE_EQ(rc.lambda_d(), 0.3);
  EXPECT_EQ(rc.checkpoint_dir(), fs::path("runs/default/train/checkpoint"));
  EXPECT_EQ(rc.manifest_path(), fs::path("runs/default/manifest.csv"));
}

TEST(RunConfig, OverridesWinOverFile) {
  TempDir dir{"rc"};
  {
    std::ofstream os(dir / "c.yaml");
    os << "train:\n  max_epochs: 7\n  batch_size: 2\n";
  }
  const RunConfig rc = RunConfig::resolve(dir / "c.yaml", {{"train.max_epochs", "3"}});
  EXPECT_EQ(rc.train().max_epochs, 3u);
  EXPECT_EQ(rc.train().batch_size, 2u);
}

TEST(RunConfig, UnknownKeysListedTogether) {
  try {
    RunConfig::resolve(std::nullopt, {{"train.bogus", "1"}, {"nope.x", "2"}});
    FAIL() << "expected ConfigError";
  } catch (const stemgan::ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("train.bogus"), std::string::npos);
    EXPECT_NE(msg.find("nope.x"), std::string::npos);
  }
}

TEST(RunConfig, RejectsBadValuesAndWindowMismatch) {
  EXPECT_THROW(RunConfig::resolve(std::nullopt, {{"train.max_epochs", "ten"}}), stemgan::ConfigError);
  EXPECT_THROW(RunConfig::resolve(std::nullopt, {{"dataset.window", "4"}}), stemgan::ConfigError);
  EXPECT_THROW(RunConfig::resolve(std::nullopt, {{"report.plots", "maybe"}}), stemgan::ConfigError);
  EXPECT_THROW(RunConfig::resolve(std::nullopt, {{"loss.lambda_d", "-1"}}), stemgan::ConfigError);
}

TEST(RunConfig, MalformedYamlIsConfigError) {
  TempDir dir{"rc"};
  {
    std::ofstream os(dir / "bad.yaml");
    os << "train: [1, 2\n";
  }
  EXPECT_THROW(RunConfig::resolve(dir / "bad.yaml", {}), stemgan::ConfigError);
}

TEST(RunConfig, HashTracksValues) {
  const RunConfig a = RunConfig::resolve(std::nullopt, {});
  const RunConfig b = RunConfig::resolve(std::nullopt, {});
  const RunConfig c = RunConfig::resolve(std::nullopt, {{"train.seed", "99"}});
  EXPECT_EQ(a.hash_hex(), b.hash_hex());
  EXPECT_NE(a.hash_hex(), c.hash_hex());
}

TEST_F(CliFixture, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}), stemgan::cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}), stemgan::cli::kExitUsage);
  EXPECT_EQ(call({"train", "--train.bogus=1"}), stemgan::cli::kExitUsage);
  EXPECT_EQ(call({"train", "stray"}), stemgan::cli::kExitUsage);
  EXPECT_EQ(run({"train", "-c", (dir / "missing.yaml").string()}), stemgan::cli::kExitUsage);
  EXPECT_FALSE(fs::exists(out / "train"));
}

TEST_F(CliFixture, HelpExitsZero) { EXPECT_EQ(run({"--help"}), stemgan::cli::kExitOk); }

TEST_F(CliFixture, MissingManifestIsConfigError) {
  EXPECT_EQ(call({"train"}), stemgan::cli::kExitUsage);
}

TEST_F(CliFixture, TrainZeroEpochsWritesCheckpoint) {
  ASSERT_EQ(call({"synth"}), 0);
  ASSERT_EQ(call({"train", "--train.max_epochs=0"}), 0);
  EXPECT_TRUE(fs::exists(out / "train" / "checkpoint"));
  const std::string resolved = slurp(out / "resolved_config.txt");
  EXPECT_NE(resolved.find("train.max_epochs=0"), std::string::npos);
}

TEST_F(CliFixture, ReportEqualsScoreThenEvaluate) {
  ASSERT_EQ(call({"synth"}), 0);
  ASSERT_EQ(call({"train"}), 0);
  ASSERT_EQ(call({"score"}), 0);
  ASSERT_EQ(call({"evaluate"}), 0);
  const std::string metrics = slurp(out / "report" / "metrics.csv");
  const std::string scores = slurp(out / "scores" / "test_01.csv");
  EXPECT_TRUE(fs::exists(out / "report" / "summary.txt"));
  EXPECT_TRUE(fs::exists(out / "report" / "threshold_sweep.csv"));
  fs::remove_all(out / "report");
  fs::remove_all(out / "scores");
  ASSERT_EQ(call({"report"}), 0);
  EXPECT_EQ(slurp(out / "report" / "metrics.csv"), metrics);
  EXPECT_EQ(slurp(out / "scores" / "test_01.csv"), scores);
}

TEST_F(CliFixture, EvaluateWithoutScoresFails) {
  ASSERT_EQ(call({"synth"}), 0);
  EXPECT_EQ(call({"evaluate"}), stemgan::cli::kExitFailure);
}

TEST_F(CliFixture, TransferFromCheckpoint) {
  ASSERT_EQ(call({"synth"}), 0);
  ASSERT_EQ(call({"train", "--train.max_epochs=0"}), 0);
  const fs::path from = dir / "base";
  fs::rename(out / "train" / "checkpoint", from);
  ASSERT_EQ(call({"train", "--transfer.from", from.string()}), 0);
  EXPECT_TRUE(fs::exists(out / "train" / "checkpoint"));
  EXPECT_EQ(call({"train", "--transfer.from", (dir / "nowhere").string()}), stemgan::cli::kExitFailure);
}

TEST_F(CliFixture, BenchIoWritesCsv) {
  ASSERT_EQ(call({"synth"}), 0);
  ASSERT_EQ(call({"bench-io", "--io.duration=0.05", "--io.runs=1"}), 0);
  const std::string csv = slurp(out / "bench_io.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
