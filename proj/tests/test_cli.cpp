// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "echosplat/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace echosplat;
namespace fs = std::filesystem;

namespace {

fs::path work_root() {
    static const fs::path root = [] {
        const fs::path dir = fs::path(::testing::TempDir()) / "cli_e2e";
        fs::remove_all(dir);
        fs::create_directories(dir);
        return dir;
    }();
    return root;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

const char* kPhantomSpec = R"({
  "rng_seed": 21, "n_layers": 2, "n_speckle_splats": 30, "n_views": 6,
  "image_width": 40, "image_height": 40, "fov_deg": 70.0
})";

const char* kTrainConfig = R"({
  "iterations": 60, "eval_every": 30, "checkpoint_every": 60,
  "densify_from": 20, "densify_until": 40, "densify_every": 10,
  "densify_max_primitives": 300, "init_count": 100, "rng_seed": 4, "threads": 2
})";

struct Pipeline : ::testing::Test {
    static void SetUpTestSuite() {
        const fs::path root = work_root();
        write_text(root / "phantom.json", kPhantomSpec);
        write_text(root / "config.json", kTrainConfig);
        ASSERT_EQ(cli::run({"synth", "--spec", (root / "phantom.json").string(), "--out",
                            (root / "data").string()}),
                  0);
        ASSERT_EQ(cli::run({"train", "--data", (root / "data").string(), "--out",
                            (root / "run").string(), "--config",
                            (root / "config.json").string()}),
                  0);
    }
};

}  // namespace

TEST(CliUsage, NoArgumentsPrintsSynopsis) {
    EXPECT_EQ(cli::run_main(1, nullptr), cli::kExitUsage);
}

TEST(CliUsage, UnknownSubcommandAndFlagsRejected) {
    EXPECT_EQ(cli::run({"frobnicate"}), cli::kExitUsage);
    EXPECT_EQ(cli::run({"train", "--bogus-flag", "1"}), cli::kExitUsage);
    EXPECT_EQ(cli::run({"synth"}), cli::kExitUsage);  // missing required options
}

TEST(CliUsage, HelpExitsCleanly) {
    ::testing::internal::CaptureStdout();
    const int code = cli::run({"--help"});
    const std::string out = ::testing::internal::GetCapturedStdout();
    EXPECT_EQ(code, 0);
    EXPECT_NE(out.find("synth"), std::string::npos);
}

TEST_F(Pipeline, SynthProducesDatasetAndGroundTruth) {
    const fs::path root = work_root();
    EXPECT_TRUE(fs::exists(root / "data/manifest.json"));
    EXPECT_TRUE(fs::exists(root / "data/frames/0000.png"));
    EXPECT_TRUE(fs::exists(root / "data/frames/0000.ugsi"));
    EXPECT_TRUE(fs::exists(root / "data/ground_truth.ugsc"));
}

TEST_F(Pipeline, TrainWritesCheckpointsAndLog) {
    const fs::path root = work_root();
    EXPECT_TRUE(fs::exists(root / "run/ckpt_60.ugsc"));
    EXPECT_TRUE(fs::exists(root / "run/train_log.jsonl"));
}

TEST_F(Pipeline, TrainTwiceIsByteIdentical) {
    const fs::path root = work_root();
    ASSERT_EQ(cli::run({"train", "--data", (root / "data").string(), "--out",
                        (root / "run_repeat").string(), "--config",
                        (root / "config.json").string()}),
              0);
    EXPECT_EQ(read_bytes(root / "run/ckpt_60.ugsc"), read_bytes(root / "run_repeat/ckpt_60.ugsc"));
}

TEST_F(Pipeline, EvalOnGroundTruthHitsPsnrCap) {
    const fs::path root = work_root();
    ::testing::internal::CaptureStdout();
    const int code = cli::run({"eval", "--ckpt", (root / "data/ground_truth.ugsc").string(),
                               "--data", (root / "data").string(), "--json"});
    const std::string out = ::testing::internal::GetCapturedStdout();
    ASSERT_EQ(code, 0);
    const auto last_line = out.substr(out.rfind('{'));
    const auto summary = nlohmann::json::parse(last_line);
    EXPECT_EQ(summary.at("mean_psnr").get<double>(), 99.0);
}

TEST_F(Pipeline, EvalOnTrainedCheckpointRuns) {
    const fs::path root = work_root();
    ::testing::internal::CaptureStdout();
    const int code = cli::run({"eval", "--ckpt", (root / "run/ckpt_60.ugsc").string(), "--data",
                               (root / "data").string()});
    const std::string out = ::testing::internal::GetCapturedStdout();
    EXPECT_EQ(code, 0);
    EXPECT_NE(out.find("mean"), std::string::npos);
}

TEST_F(Pipeline, RenderByIndexAndPoseFile) {
    const fs::path root = work_root();
    ASSERT_EQ(cli::run({"render", "--ckpt", (root / "data/ground_truth.ugsc").string(), "--pose",
                        "1", "--data", (root / "data").string(), "--out",
                        (root / "render_idx.png").string()}),
              0);
    EXPECT_TRUE(fs::exists(root / "render_idx.png"));
    EXPECT_TRUE(fs::exists(root / "render_idx.ugsi"));
    EXPECT_TRUE(fs::exists(root / "render_idx_depth.png"));
    EXPECT_TRUE(fs::exists(root / "render_idx_depth.ugsi"));

    // pose file with the identity camera-to-world transform
    write_text(root / "pose.json", R"({"width": 48, "height": 40,
      "c2w": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]})");
    ASSERT_EQ(cli::run({"render", "--ckpt", (root / "data/ground_truth.ugsc").string(), "--pose",
                        (root / "pose.json").string(), "--out",
                        (root / "render_pose.png").string()}),
              0);
    const Image img = read_png_gray8((root / "render_pose.png").string());
    EXPECT_EQ(img.width, 48);
    EXPECT_EQ(img.height, 40);

    // index pose without --data is a usage-level configuration error
    EXPECT_EQ(cli::run({"render", "--ckpt", (root / "data/ground_truth.ugsc").string(), "--pose",
                        "1", "--out", (root / "nope.png").string()}),
              cli::kExitCheckFailed);
}

TEST_F(Pipeline, AblateVariantTrainsAndEvals) {
    const fs::path root = work_root();
    ::testing::internal::CaptureStdout();
    const int code = cli::run({"ablate", "--data", (root / "data").string(), "--out",
                               (root / "run_nodar").string(), "--variant", "w/o DAR", "--config",
                               (root / "config.json").string()});
    const std::string out = ::testing::internal::GetCapturedStdout();
    ASSERT_EQ(code, 0);
    EXPECT_TRUE(fs::exists(root / "run_nodar/train_log.jsonl"));
    EXPECT_NE(out.find("w/o DAR"), std::string::npos);

    // the ablated checkpoint evaluates like any other
    ::testing::internal::CaptureStdout();
    const int eval_code = cli::run({"eval", "--ckpt", (root / "run_nodar/ckpt_60.ugsc").string(),
                                    "--data", (root / "data").string()});
    const std::string eval_out = ::testing::internal::GetCapturedStdout();
    EXPECT_EQ(eval_code, 0);
    EXPECT_NE(eval_out.find("mean"), std::string::npos);
}

TEST_F(Pipeline, GradcheckOnTrainedCheckpoint) {
    const fs::path root = work_root();
    ::testing::internal::CaptureStdout();
    const int code = cli::run({"gradcheck", "--ckpt", (root / "run/ckpt_60.ugsc").string(),
                               "--data", (root / "data").string(), "--group", "weights"});
    const std::string out = ::testing::internal::GetCapturedStdout();
    EXPECT_EQ(code, 0) << out;
    EXPECT_NE(out.find("weights"), std::string::npos);
}

TEST_F(Pipeline, BenchReportsThroughput) {
    const fs::path root = work_root();
    ::testing::internal::CaptureStdout();
    const int code = cli::run({"bench", "--ckpt", (root / "data/ground_truth.ugsc").string(),
                               "--frames", "1", "--width", "64", "--height", "64"});
    const std::string out = ::testing::internal::GetCapturedStdout();
    ASSERT_EQ(code, 0);
    EXPECT_NE(out.find("mean fps"), std::string::npos);
    EXPECT_NE(out.find("binning"), std::string::npos);
}

TEST(CliErrors, MissingFilesFailGracefully) {
    EXPECT_EQ(cli::run({"eval", "--ckpt", "/nonexistent.ugsc", "--data", "/nonexistent"}),
              cli::kExitCheckFailed);
    EXPECT_EQ(cli::run({"synth", "--spec", "/nonexistent.json", "--out", "/tmp/x"}),
              cli::kExitCheckFailed);
}
