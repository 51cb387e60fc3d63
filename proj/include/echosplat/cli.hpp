// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "echosplat/phantom.hpp"
#include "echosplat/trainer.hpp"

namespace echosplat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline TrainConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return TrainConfig{};
    return load_config_file(path);
}

inline CameraView pose_from_file(const std::string& path, const SceneModel&) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Kind::open_failed, "cannot open pose file: " + path);
    nlohmann::json j;
    in >> j;
    const int width = j.at("width").get<int>();
    const int height = j.at("height").get<int>();
    const auto values = j.at("c2w").get<std::vector<double>>();
    if (values.size() != 16)
        throw IoError(IoError::Kind::bad_content, "pose c2w must hold 16 values");
    Mat4 c2w;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) c2w(r, c) = values[r * 4 + c];
    CameraView view = view_from_c2w(c2w, width, height, -1);
    if (!view.is_rigid(1e-6))
        throw IoError(IoError::Kind::bad_content, "pose file holds a non-rigid transform");
    return view;
}

inline void write_render_outputs(const RenderOutput& out, const std::string& out_path) {
    namespace fs = std::filesystem;
    const fs::path base(out_path);
    const fs::path stem = base.parent_path() / base.stem();

    const Image intensity = clamped(out.intensity);
    write_png_gray8(stem.string() + ".png", intensity);
    write_ugsi(stem.string() + ".ugsi", intensity);
    write_ugsi(stem.string() + "_depth.ugsi", out.depth);
    write_png_gray8(stem.string() + "_depth.png", normalized_preview(out.depth));
}

}  // namespace detail

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"echosplat: differentiable 2D-Gaussian-disk splatting for ultrasound-style "
                 "novel view synthesis"};
    app.require_subcommand(1);
    int threads = 0;
    bool deterministic = true;
    app.add_option("--threads", threads, "cap the render/backward worker pool");
    app.add_flag("--deterministic,!--no-deterministic", deterministic,
                 "ordered reductions (always on; flag kept for compatibility)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
    std::string synth_spec, synth_out;
    synth->add_option("--spec", synth_spec, "phantom spec JSON")->required();
    synth->add_option("--out", synth_out, "output dataset directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "optimize a scene against a dataset");
    std::string train_data, train_out, train_config, train_ablate;
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--config", train_config, "training config JSON");
    train_cmd->add_option("--ablate", train_ablate, "ablation variant");

    // render
    auto* render_cmd = app.add_subcommand("render", "render a checkpoint from a pose");
    std::string render_ckpt, render_pose, render_data, render_out, render_config;
    render_cmd->add_option("--ckpt", render_ckpt, "checkpoint file")->required();
    render_cmd->add_option("--pose", render_pose, "pose file or dataset frame index")->required();
    render_cmd->add_option("--data", render_data, "dataset directory (for index poses)");
    render_cmd->add_option("--out", render_out, "output image path")->required();
    render_cmd->add_option("--config", render_config, "config JSON");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "metrics over the test split");
    std::string eval_ckpt, eval_data, eval_config;
    bool eval_json = false;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--config", eval_config, "config JSON");
    eval_cmd->add_flag("--json", eval_json, "emit line-delimited records");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train one ablation variant");
    std::string ablate_data, ablate_out, ablate_config, ablate_variant;
    ablate_cmd->add_option("--data", ablate_data, "dataset directory")->required();
    ablate_cmd->add_option("--out", ablate_out, "output directory")->required();
    ablate_cmd->add_option("--variant", ablate_variant, "full | w/o I_att | w/o I_refl & I_scat | "
                                                        "w/o DAR | w/o PD Rendering")
        ->required();
    ablate_cmd->add_option("--config", ablate_config, "training config JSON");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string grad_ckpt, grad_data, grad_group, grad_config;
    double grad_h = 1e-5;
    grad_cmd->add_option("--ckpt", grad_ckpt, "checkpoint file")->required();
    grad_cmd->add_option("--data", grad_data, "dataset directory")->required();
    grad_cmd->add_option("--group", grad_group, "restrict to one parameter group");
    grad_cmd->add_option("--step", grad_h, "central-difference step");
    grad_cmd->add_option("--config", grad_config, "config JSON");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "render throughput report");
    std::string bench_ckpt, bench_data, bench_config;
    int bench_frames = 10, bench_width = 256, bench_height = 256;
    bench_cmd->add_option("--ckpt", bench_ckpt, "checkpoint file")->required();
    bench_cmd->add_option("--frames", bench_frames, "number of frames to render");
    bench_cmd->add_option("--width", bench_width, "image width");
    bench_cmd->add_option("--height", bench_height, "image height");
    bench_cmd->add_option("--data", bench_data, "dataset directory (borrow frame 0 pose)");
    bench_cmd->add_option("--config", bench_config, "config JSON");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::fputs(app.help().c_str(), stderr);
        return kExitUsage;
    }

    try {
        if (*synth) {
            std::ifstream in(synth_spec);
            if (!in) throw IoError(IoError::Kind::open_failed, "cannot open spec: " + synth_spec);
            nlohmann::json j;
            in >> j;
            const PhantomSpec spec = j.get<PhantomSpec>();
            write_phantom(spec, synth_out);
            std::printf("wrote phantom dataset (%d views) to %s\n", spec.n_views,
                        synth_out.c_str());
            return kExitOk;
        }

        if (*train_cmd) {
            TrainConfig cfg = detail::load_config_or_default(train_config);
            if (threads > 0) cfg.tile.threads = threads;
            const Dataset dataset = load_dataset(train_data);
            const SceneModel init = make_init_scene(dataset, cfg);
            TrainLog log;
            if (train_ablate.empty()) {
                auto [scene, l] = train(dataset, init, cfg, train_out);
                log = std::move(l);
            } else {
                auto [scene, l] = run_ablation(dataset, init, cfg, train_ablate, train_out);
                log = std::move(l);
            }
            const auto& last = log.records.back();
            std::printf("trained %d iterations: loss %.6g, held-out PSNR %.3f dB, SSIM %.4f, "
                        "%zu primitives\n",
                        last.iteration, last.train_loss, last.psnr, last.ssim, last.primitives);
            return kExitOk;
        }

        if (*render_cmd) {
            TrainConfig cfg = detail::load_config_or_default(render_config);
            if (threads > 0) cfg.tile.threads = threads;
            const SceneModel scene = load_checkpoint(render_ckpt);

            CameraView view;
            char* end = nullptr;
            const long index = std::strtol(render_pose.c_str(), &end, 10);
            if (end && *end == '\0' && !render_pose.empty()) {
                if (render_data.empty())
                    throw ConfigError("--pose <index> requires --data");
                const Dataset dataset = load_dataset(render_data);
                if (index < 0 || index >= static_cast<long>(dataset.frames.size()))
                    throw ConfigError("pose index out of range");
                view = dataset.frames[static_cast<std::size_t>(index)].view;
            } else {
                view = detail::pose_from_file(render_pose, scene);
            }

            const RenderOutput out = render(scene, view, cfg.tile);
            detail::write_render_outputs(out, render_out);
            std::printf("rendered %dx%d from %s\n", view.image_width, view.image_height,
                        render_ckpt.c_str());
            return kExitOk;
        }

        if (*eval_cmd) {
            TrainConfig cfg = detail::load_config_or_default(eval_config);
            if (threads > 0) cfg.tile.threads = threads;
            const SceneModel scene = load_checkpoint(eval_ckpt);
            const Dataset dataset = preprocess_dataset(load_dataset(eval_data), cfg);
            const auto& indices =
                dataset.test_indices.empty() ? dataset.train_indices : dataset.test_indices;

            const TileConfig eval_tile = eval_fidelity(cfg.tile);
            double sum_psnr = 0, sum_ssim = 0, sum_mse = 0;
            if (!eval_json) std::printf("%8s %10s %10s %12s\n", "frame", "PSNR", "SSIM", "MSE");
            for (int idx : indices) {
                const RenderOutput out = render(scene, dataset.frames[idx].view, eval_tile);
                const Image rendered = clamped(out.intensity);
                const double p = psnr(rendered, dataset.frames[idx].image);
                const double s = ssim(rendered, dataset.frames[idx].image);
                const double m = mse(rendered, dataset.frames[idx].image);
                sum_psnr += p;
                sum_ssim += s;
                sum_mse += m;
                if (eval_json) {
                    nlohmann::json j{{"frame", idx}, {"psnr", p}, {"ssim", s}, {"mse", m}};
                    std::printf("%s\n", j.dump().c_str());
                } else {
                    std::printf("%8d %10.3f %10.4f %12.3e\n", idx, p, s, m);
                }
            }
            const double inv = 1.0 / static_cast<double>(indices.size());
            if (eval_json) {
                nlohmann::json j{{"mean_psnr", sum_psnr * inv},
                                 {"mean_ssim", sum_ssim * inv},
                                 {"mean_mse", sum_mse * inv}};
                std::printf("%s\n", j.dump().c_str());
            } else {
                std::printf("%8s %10.3f %10.4f %12.3e\n", "mean", sum_psnr * inv, sum_ssim * inv,
                            sum_mse * inv);
            }
            return kExitOk;
        }

        if (*ablate_cmd) {
            TrainConfig cfg = detail::load_config_or_default(ablate_config);
            if (threads > 0) cfg.tile.threads = threads;
            const Dataset dataset = load_dataset(ablate_data);
            const SceneModel init = make_init_scene(dataset, cfg);
            auto [scene, log] = run_ablation(dataset, init, cfg, ablate_variant, ablate_out);
            const auto& last = log.records.back();
            std::printf("ablation '%s': held-out PSNR %.3f dB, SSIM %.4f\n",
                        ablate_variant.c_str(), last.psnr, last.ssim);
            return kExitOk;
        }

        if (*grad_cmd) {
            TrainConfig cfg = detail::load_config_or_default(grad_config);
            if (threads > 0) cfg.tile.threads = threads;
            // Verification wants high cutoff and no early termination so the
            // finite differences probe a smooth forward map.
            cfg.tile.gaussian_cutoff = std::max(cfg.tile.gaussian_cutoff, 9.0);
            cfg.tile.early_terminate = false;

            const SceneModel scene = load_checkpoint(grad_ckpt);
            const Dataset dataset = preprocess_dataset(load_dataset(grad_data), cfg);
            const int frame_idx =
                dataset.test_indices.empty() ? 0 : dataset.test_indices.front();
            const FrameRecord& frame = dataset.frames[frame_idx];

            std::vector<ParamGroup> groups =
                grad_group.empty() ? all_param_groups()
                                   : std::vector<ParamGroup>{param_group_from_name(grad_group)};
            bool failed = false;
            for (ParamGroup group : groups) {
                const double err = finite_diff_check(scene, frame.view, cfg.tile, frame.image,
                                                     group, grad_h, cfg.lambda_dssim);
                std::printf("%-10s max relative error %.3e\n", param_group_name(group), err);
                if (err > 1e-3) failed = true;
            }
            return failed ? kExitCheckFailed : kExitOk;
        }

        if (*bench_cmd) {
            TrainConfig cfg = detail::load_config_or_default(bench_config);
            if (threads > 0) cfg.tile.threads = threads;
            const SceneModel scene = load_checkpoint(bench_ckpt);

            CameraView view;
            view.image_width = bench_width;
            view.image_height = bench_height;
            if (!bench_data.empty()) {
                const Dataset dataset = load_dataset(bench_data);
                view = dataset.frames.front().view;
                view.image_width = bench_width;
                view.image_height = bench_height;
            }

            const BenchReport report = bench(scene, view, cfg.tile, bench_frames);
            std::printf("frames %zu  mean fps %.2f\n", report.frame_seconds.size(),
                        report.mean_fps);
            std::printf("stage seconds (summed over workers): binning %.4f  intersect %.4f  "
                        "composite %.4f\n",
                        report.binning_seconds, report.intersect_seconds,
                        report.composite_seconds);
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitCheckFailed;
    }
    return kExitUsage;
}

inline int run_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    if (args.empty()) {
        std::fprintf(stderr, "usage: echosplat <synth|train|render|eval|ablate|gradcheck|bench> "
                             "[options]\nrun with --help for details\n");
        return kExitUsage;
    }
    return run(args);
}

}  // namespace echosplat::cli
