// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "echosplat/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "echosplat/phantom.hpp"
#include "test_util.hpp"

using namespace echosplat;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::path(::testing::TempDir()) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Dataset tiny_dataset(double noise = 0.0) {
    PhantomSpec spec;
    spec.rng_seed = 5;
    spec.n_layers = 2;
    spec.n_speckle_splats = 25;
    spec.n_views = 5;
    spec.image_width = 32;
    spec.image_height = 32;
    spec.noise_sigma = noise;
    return make_phantom(spec).second;
}

TrainConfig tiny_config(int iterations) {
    TrainConfig cfg;
    cfg.iterations = iterations;
    cfg.eval_every = std::max(1, iterations / 2);
    cfg.checkpoint_every = iterations;
    cfg.densify_from = iterations / 4;
    cfg.densify_until = iterations / 2;
    cfg.densify_every = std::max(1, iterations / 8);
    cfg.densify_max_primitives = 400;
    cfg.init_count = 120;
    cfg.rng_seed = 9;
    cfg.tile.threads = 2;
    return cfg;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.iterations = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.iterations = 10;
    cfg.densify_until = 20;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKey) {
    TrainConfig cfg;
    cfg.iterations = 123;
    cfg.lrs.position = 3e-4;
    cfg.tile.compose_stage = ComposeStage::per_pixel;
    nlohmann::json j;
    config_to_json(j, cfg);
    const TrainConfig back = config_from_json(j);
    EXPECT_EQ(back.iterations, 123);
    EXPECT_DOUBLE_EQ(back.lrs.position, 3e-4);
    EXPECT_EQ(back.tile.compose_stage, ComposeStage::per_pixel);

    nlohmann::json bad = j;
    bad["iteratoins"] = 5;
    EXPECT_THROW(config_from_json(bad), ConfigError);
}

TEST(Train, SingleIterationBoundary) {
    const Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(1);
    cfg.densify_from = 0;
    cfg.densify_until = 0;
    const SceneModel init = make_init_scene(ds, cfg);
    const auto [scene, log] = train(ds, init, cfg);
    EXPECT_EQ(log.records.size(), 1u);
    EXPECT_EQ(log.records[0].iteration, 1);
    // one optimizer step moved something
    EXPECT_NE(scene.primitives[0].opacity_logit, init.primitives[0].opacity_logit);
}

TEST(Train, DeterministicAcrossRuns) {
    const Dataset ds = tiny_dataset();
    const TrainConfig cfg = tiny_config(60);
    const SceneModel init = make_init_scene(ds, cfg);

    const fs::path dir_a = temp_dir("train_det_a");
    const fs::path dir_b = temp_dir("train_det_b");
    const auto [scene_a, log_a] = train(ds, init, cfg, dir_a.string());
    const auto [scene_b, log_b] = train(ds, init, cfg, dir_b.string());

    EXPECT_TRUE(log_a.equals_ignoring_time(log_b));
    const auto bytes_a = read_bytes(dir_a / "ckpt_60.ugsc");
    const auto bytes_b = read_bytes(dir_b / "ckpt_60.ugsc");
    ASSERT_FALSE(bytes_a.empty());
    EXPECT_EQ(bytes_a, bytes_b);
}

TEST(Train, LossDecreasesOnPhantom) {
    const Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(200);
    cfg.eval_every = 40;
    const SceneModel init = make_init_scene(ds, cfg);
    const auto [scene, log] = train(ds, init, cfg);
    (void)scene;
    ASSERT_GE(log.records.size(), 3u);
    EXPECT_LT(log.records.back().train_loss, log.records.front().train_loss);
    EXPECT_GT(log.records.back().psnr, log.records.front().psnr);
}

TEST(Train, EmptyDatasetRejected) {
    Dataset ds;
    const TrainConfig cfg = tiny_config(5);
    SceneModel init;
    init.primitives.push_back(
        make_splat(Vec3(0, 0, 1), Vec3::UnitX(), Vec3::UnitY(), -3, -3, 0, 1));
    EXPECT_THROW(train(ds, init, cfg), PreconditionError);
}

TEST(Train, DivergenceGuardAbortsWithDiagnosticCheckpoint) {
    Dataset ds = tiny_dataset();
    // An extreme (finite) target overflows the SSIM statistics into NaN, so
    // the first loss is non-finite and the guard must fire.
    for (auto& f : ds.frames)
        for (double& v : f.image.px) v = 1e308;
    TrainConfig cfg = tiny_config(5);
    const fs::path dir = temp_dir("train_diverge");
    const SceneModel init = make_init_scene(ds, cfg);
    EXPECT_THROW(train(ds, init, cfg, dir.string()), TrainingDiverged);
    EXPECT_TRUE(fs::exists(dir / "ckpt_diverged.ugsc"));
}

TEST(Densify, DisabledThresholdsKeepSceneUnchanged) {
    std::mt19937_64 rng(31);
    SceneModel scene = testutil::random_scene(rng, 10, 1);
    AdamState state = AdamState::zero_like(scene);
    TrainConfig cfg = tiny_config(100);
    cfg.grad_threshold = std::numeric_limits<double>::infinity();
    cfg.opacity_prune_threshold = 0.0;
    std::vector<double> grads(10, 1.0);
    const DensifyReport report = densify_and_prune(scene, state, grads, cfg, rng);
    EXPECT_EQ(scene.primitives.size(), 10u);
    EXPECT_EQ(report.cloned + report.split + report.pruned, 0);
}

TEST(Densify, CloneAddsExactlyOne) {
    std::mt19937_64 rng(37);
    SceneModel scene;
    scene.primitives.push_back(
        make_splat(Vec3(0, 0, 1), Vec3::UnitX(), Vec3::UnitY(), std::log(0.01), std::log(0.01),
                   2.0, 1));
    scene.primitives.push_back(
        make_splat(Vec3(0.1, 0, 1), Vec3::UnitX(), Vec3::UnitY(), std::log(0.01), std::log(0.01),
                   2.0, 1));
    AdamState state = AdamState::zero_like(scene);
    TrainConfig cfg = tiny_config(100);
    cfg.grad_threshold = 0.5;
    cfg.densify_scale_threshold = 0.05;  // both splats are "small"
    std::vector<double> grads = {1.0, 0.0};  // only the first is over threshold
    const DensifyReport report = densify_and_prune(scene, state, grads, cfg, rng);
    EXPECT_EQ(report.cloned, 1);
    EXPECT_EQ(report.split, 0);
    EXPECT_EQ(scene.primitives.size(), 3u);
    EXPECT_EQ(state.m.primitives.size(), 3u);
}

TEST(Densify, SplitLargeSplatsShrinksChildren) {
    std::mt19937_64 rng(41);
    SceneModel scene;
    scene.primitives.push_back(make_splat(Vec3(0, 0, 1), Vec3::UnitX(), Vec3::UnitY(),
                                          std::log(0.2), std::log(0.2), 2.0, 1));
    AdamState state = AdamState::zero_like(scene);
    TrainConfig cfg = tiny_config(100);
    cfg.grad_threshold = 0.5;
    cfg.densify_scale_threshold = 0.05;
    std::vector<double> grads = {1.0};
    const DensifyReport report = densify_and_prune(scene, state, grads, cfg, rng);
    EXPECT_EQ(report.split, 1);
    ASSERT_EQ(scene.primitives.size(), 2u);
    EXPECT_NEAR(scene.primitives[0].scale_u(), 0.2 / 1.6, 1e-12);
}

TEST(Densify, PruneFloorKeepsOnePrimitive) {
    std::mt19937_64 rng(43);
    SceneModel scene;
    for (int i = 0; i < 5; ++i)
        scene.primitives.push_back(make_splat(Vec3(0.1 * i, 0, 1), Vec3::UnitX(), Vec3::UnitY(),
                                              -3, -3, -10.0 - i, 1));
    AdamState state = AdamState::zero_like(scene);
    TrainConfig cfg = tiny_config(100);
    cfg.opacity_prune_threshold = 1.0;  // everything below threshold
    std::vector<double> grads(5, 0.0);
    const DensifyReport report = densify_and_prune(scene, state, grads, cfg, rng);
    EXPECT_TRUE(report.prune_floor_hit);
    ASSERT_EQ(scene.primitives.size(), 1u);
    EXPECT_NEAR(scene.primitives[0].opacity_logit, -10.0, 1e-12);  // most opaque retained
}

TEST(Ablation, VariantWiring) {
    EXPECT_EQ(ablation_flags_for("full"), kAblateNone);
    EXPECT_EQ(ablation_flags_for("w/o I_att"), kDisableAtt);
    EXPECT_EQ(ablation_flags_for("w/o I_refl & I_scat"), kDisableReflScat);
    EXPECT_EQ(ablation_flags_for("w/o DAR"), kDisableDar);
    EXPECT_EQ(ablation_flags_for("w/o PD Rendering"), kDisablePd);
    EXPECT_EQ(ablation_flags_for("no_pd"), kDisablePd);
    EXPECT_THROW(ablation_flags_for("w/o everything"), ConfigError);
}

TEST(Ablation, FullVariantMatchesPlainTraining) {
    const Dataset ds = tiny_dataset();
    const TrainConfig cfg = tiny_config(30);
    const SceneModel init = make_init_scene(ds, cfg);
    const auto [scene_a, log_a] = train(ds, init, cfg);
    const auto [scene_b, log_b] = run_ablation(ds, init, cfg, "full");
    EXPECT_TRUE(log_a.equals_ignoring_time(log_b));
    EXPECT_EQ(scene_a.primitives.size(), scene_b.primitives.size());
}

TEST(Ablation, WithoutDarFreezesTheta) {
    const Dataset ds = tiny_dataset();
    const TrainConfig cfg = tiny_config(40);
    const SceneModel init = make_init_scene(ds, cfg);
    const auto [scene, log] = run_ablation(ds, init, cfg, "w/o DAR");
    EXPECT_EQ(scene.dar.theta_x, init.dar.theta_x);
    EXPECT_EQ(scene.dar.theta_y, init.dar.theta_y);
    for (const auto& rec : log.records) EXPECT_EQ(rec.theta_grad_max, 0.0);
}

TEST(Ablation, WithoutPdUsesDegreeThree) {
    const Dataset ds = tiny_dataset();
    const TrainConfig cfg = tiny_config(20);
    const SceneModel init = make_init_scene(ds, cfg);
    const auto [scene, log] = run_ablation(ds, init, cfg, "w/o PD Rendering");
    (void)log;
    EXPECT_EQ(scene.sh_degree, 3);
    EXPECT_EQ(scene.primitives.front().sh_coeffs.cols(), 16);
    EXPECT_EQ(scene.ablation_flags, kDisablePd);
}

TEST(TrainLog, JsonlOutput) {
    const Dataset ds = tiny_dataset();
    TrainConfig cfg = tiny_config(20);
    cfg.eval_every = 10;
    const fs::path dir = temp_dir("train_log");
    const SceneModel init = make_init_scene(ds, cfg);
    const auto [scene, log] = train(ds, init, cfg, dir.string());
    (void)scene;

    std::ifstream in(dir / "train_log.jsonl");
    ASSERT_TRUE(in.good());
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    const auto meta = nlohmann::json::parse(line);
    EXPECT_EQ(meta.at("type"), "meta");
    EXPECT_EQ(meta.at("rng_seed").get<std::uint64_t>(), cfg.rng_seed);

    int evals = 0;
    int prev_iter = 0;
    while (std::getline(in, line)) {
        const auto rec = nlohmann::json::parse(line);
        EXPECT_EQ(rec.at("type"), "eval");
        const int iter = rec.at("iteration").get<int>();
        EXPECT_GT(iter, prev_iter);  // strictly increasing
        prev_iter = iter;
        ++evals;
    }
    EXPECT_EQ(evals, static_cast<int>(log.records.size()));
}
