/* Copyright 2026 The MSFN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "msfn/data.hpp"

namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("msfn_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  // Exit status of the CLI, output sent to log.txt.
  static int run(const std::string& args) {
    const std::string cmd = "cd '" + dir_.string() + "' && '" MSFN_CLI "' " + args +
                            " > log.txt 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }
  static std::string log() {
    std::ifstream in(dir_ / "log.txt");
    return {std::istreambuf_iterator<char>(in), {}};
  }

  static inline fs::path dir_;
};

const char* kTiny =
    "--set epochs=1 --set batch_size=2 --set model.input_size=32 "
    "--set model.encoder_channels=[4,8,8,8,8] --set val_fraction=0.34";

TEST_F(CliTest, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("train --no-such-flag"), 2);
  EXPECT_EQ(run("train"), 2);
  EXPECT_NE(log().find("--manifest"), std::string::npos);
}

TEST_F(CliTest, EndToEnd) {
  ASSERT_EQ(run("synth --n 5 --size 128 --seed 3 --out ds --train-fraction 0.8"), 0) << log();
  ASSERT_TRUE(fs::exists(dir_ / "ds" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir_ / "ds" / "effective_config.json"));
  const auto m = msfn::data::load_manifest(dir_ / "ds" / "manifest.json");
  EXPECT_EQ(m.entries.size(), 5u);
  EXPECT_EQ(run("synth --n 5 --out ds"), 2);  // non-empty output without --force
  EXPECT_NE(log().find("--force"), std::string::npos);

  ASSERT_EQ(run("extract --manifest ds/manifest.json --signal dct --out cache"), 0) << log();
  EXPECT_NE(log().find("5 extractor call(s)"), std::string::npos) << log();
  ASSERT_EQ(run("extract --manifest ds/manifest.json --signal dct --out cache"), 0);
  EXPECT_NE(log().find("0 extractor call(s)"), std::string::npos) << log();

  const std::string dct = " --set 'model.signals=[\"DCT\"]' ";
  ASSERT_EQ(run("train --manifest ds/manifest.json --cache cache --seed 4 --out run " +
                std::string(kTiny) + dct),
            0)
      << log();
  EXPECT_TRUE(fs::exists(dir_ / "run" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "train_log.csv"));
  std::ifstream eff(dir_ / "run" / "effective_config.json");
  const auto j = nlohmann::json::parse(eff);
  EXPECT_EQ(j.at("config").at("seed"), 4);
  EXPECT_EQ(j.at("config").at("model").at("input_size"), 32);

  EXPECT_EQ(run("train --manifest ds/manifest.json --out run2 --set bogus=1"), 2);
  EXPECT_EQ(run("finetune --manifest ds/manifest.json --out ft0 " + std::string(kTiny)), 2);
  ASSERT_EQ(run("finetune --manifest ds/manifest.json --cache cache --init run/best.ckpt --out ft " +
                std::string(kTiny) + dct),
            0)
      << log();

  ASSERT_EQ(run("eval --checkpoint ft/best.ckpt --manifest ds/manifest.json --cache cache "
                "--out ev --heatmaps"),
            0)
      << log();
  std::ifstream rep(dir_ / "ev" / "report.json");
  const auto r = nlohmann::json::parse(rep);
  EXPECT_TRUE(r.contains("mean_auc"));
  EXPECT_FALSE(fs::is_empty(dir_ / "ev" / "heatmaps"));

  ASSERT_EQ(run("predict --checkpoint run/best.ckpt --image ds/images/00000.png --out pr"), 0)
      << log();
  EXPECT_TRUE(fs::exists(dir_ / "pr" / "00000_heatmap.png"));
  EXPECT_EQ(run("predict --checkpoint run/best.ckpt --image ds/images/00000.png --out pr"), 2);
}

TEST_F(CliTest, MissingFilesAreOperationalFailures) {
  std::ofstream(dir_ / "broken.json") << "{\"name\": \"b\", \"entries\": "
                                         "[{\"image\": \"gone.png\", \"mask\": \"gone.png\"}]}";
  EXPECT_EQ(run("train --manifest broken.json --out rb"), 1);
  EXPECT_NE(log().find("gone.png"), std::string::npos) << log();
}

}  // namespace
