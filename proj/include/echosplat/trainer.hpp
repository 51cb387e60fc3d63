// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "echosplat/adam.hpp"
#include "echosplat/autodiff.hpp"
#include "echosplat/dataset.hpp"
#include "echosplat/metrics.hpp"
#include "echosplat/preprocess.hpp"
#include "echosplat/rasterizer.hpp"

namespace echosplat {

struct TrainConfig {
    int iterations = 5000;
    int eval_every = 500;
    int checkpoint_every = 1000;
    int densify_from = 500;
    int densify_until = 4000;
    int densify_every = 100;
    double grad_threshold = 2e-4;
    double opacity_prune_threshold = 0.005;
    double densify_scale_threshold = 0.05;  // clone at or below, split above
    int densify_max_primitives = 20000;     // growth stops here; pruning continues
    std::uint32_t ablation_flags = kAblateNone;
    double lambda_dssim = 0.2;
    LrTable lrs;
    std::uint64_t rng_seed = 0;
    int sh_degree = 1;

    // random initialization
    int init_count = 600;
    Vec3 init_box_min = Vec3(-0.35, -0.35, 0.55);
    Vec3 init_box_max = Vec3(0.35, 0.35, 1.15);
    double init_opacity = 0.15;
    double init_scale = 0.05;

    TileConfig tile;

    // appendix preprocessing, applied to targets before training and eval
    bool preprocess_diffusion = false;
    int diffusion_iterations = 15;
    double diffusion_kappa = 0.1;
    double diffusion_lambda = 0.2;
    bool preprocess_clahe = false;
    int clahe_tiles = 8;
    double clahe_clip = 2.0;

    void validate() const {
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (eval_every < 1 || checkpoint_every < 1)
            throw ConfigError("eval/checkpoint cadence must be >= 1");
        if (densify_from < 0 || densify_until > iterations || densify_every < 1)
            throw ConfigError("densify window must lie within [0, iterations]");
        if (init_count < 1) throw ConfigError("init_count must be >= 1");
    }
};

inline void config_to_json(nlohmann::json& j, const TrainConfig& c) {
    j["iterations"] = c.iterations;
    j["eval_every"] = c.eval_every;
    j["checkpoint_every"] = c.checkpoint_every;
    j["densify_from"] = c.densify_from;
    j["densify_until"] = c.densify_until;
    j["densify_every"] = c.densify_every;
    j["grad_threshold"] = c.grad_threshold;
    j["opacity_prune_threshold"] = c.opacity_prune_threshold;
    j["densify_scale_threshold"] = c.densify_scale_threshold;
    j["densify_max_primitives"] = c.densify_max_primitives;
    j["lambda_dssim"] = c.lambda_dssim;
    j["rng_seed"] = c.rng_seed;
    j["sh_degree"] = c.sh_degree;
    j["init_count"] = c.init_count;
    j["init_box_min"] = {c.init_box_min[0], c.init_box_min[1], c.init_box_min[2]};
    j["init_box_max"] = {c.init_box_max[0], c.init_box_max[1], c.init_box_max[2]};
    j["init_opacity"] = c.init_opacity;
    j["init_scale"] = c.init_scale;
    j["lr_position"] = c.lrs.position;
    j["lr_tangent"] = c.lrs.tangent;
    j["lr_log_scale"] = c.lrs.log_scale;
    j["lr_opacity"] = c.lrs.opacity;
    j["lr_sh"] = c.lrs.sh;
    j["lr_acoustic"] = c.lrs.acoustic;
    j["lr_dar"] = c.lrs.dar;
    j["tile_size"] = c.tile.tile_size;
    j["gaussian_cutoff"] = c.tile.gaussian_cutoff;
    j["max_splats_per_pixel"] = c.tile.max_splats_per_pixel;
    j["early_terminate"] = c.tile.early_terminate;
    j["termination_threshold"] = c.tile.termination_threshold;
    j["compose_stage"] =
        c.tile.compose_stage == ComposeStage::per_splat ? "per_splat" : "per_pixel";
    j["threads"] = c.tile.threads;
    j["preprocess_diffusion"] = c.preprocess_diffusion;
    j["diffusion_iterations"] = c.diffusion_iterations;
    j["diffusion_kappa"] = c.diffusion_kappa;
    j["diffusion_lambda"] = c.diffusion_lambda;
    j["preprocess_clahe"] = c.preprocess_clahe;
    j["clahe_tiles"] = c.clahe_tiles;
    j["clahe_clip"] = c.clahe_clip;
}

// Flat key-value config; unknown keys are rejected so typos fail loudly.
inline TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    nlohmann::json known;
    config_to_json(known, c);
    known["ablation_flags"] = 0;
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config key: " + key);
        (void)value;
    }

    c.iterations = j.value("iterations", c.iterations);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.densify_from = j.value("densify_from", c.densify_from);
    c.densify_until = j.value("densify_until", c.densify_until);
    c.densify_every = j.value("densify_every", c.densify_every);
    c.grad_threshold = j.value("grad_threshold", c.grad_threshold);
    c.opacity_prune_threshold = j.value("opacity_prune_threshold", c.opacity_prune_threshold);
    c.densify_scale_threshold = j.value("densify_scale_threshold", c.densify_scale_threshold);
    c.densify_max_primitives = j.value("densify_max_primitives", c.densify_max_primitives);
    c.lambda_dssim = j.value("lambda_dssim", c.lambda_dssim);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.sh_degree = j.value("sh_degree", c.sh_degree);
    c.init_count = j.value("init_count", c.init_count);
    if (j.contains("init_box_min")) {
        const auto v = j.at("init_box_min").get<std::vector<double>>();
        c.init_box_min = Vec3(v.at(0), v.at(1), v.at(2));
    }
    if (j.contains("init_box_max")) {
        const auto v = j.at("init_box_max").get<std::vector<double>>();
        c.init_box_max = Vec3(v.at(0), v.at(1), v.at(2));
    }
    c.init_opacity = j.value("init_opacity", c.init_opacity);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.lrs.position = j.value("lr_position", c.lrs.position);
    c.lrs.tangent = j.value("lr_tangent", c.lrs.tangent);
    c.lrs.log_scale = j.value("lr_log_scale", c.lrs.log_scale);
    c.lrs.opacity = j.value("lr_opacity", c.lrs.opacity);
    c.lrs.sh = j.value("lr_sh", c.lrs.sh);
    c.lrs.acoustic = j.value("lr_acoustic", c.lrs.acoustic);
    c.lrs.dar = j.value("lr_dar", c.lrs.dar);
    c.tile.tile_size = j.value("tile_size", c.tile.tile_size);
    c.tile.gaussian_cutoff = j.value("gaussian_cutoff", c.tile.gaussian_cutoff);
    c.tile.max_splats_per_pixel = j.value("max_splats_per_pixel", c.tile.max_splats_per_pixel);
    c.tile.early_terminate = j.value("early_terminate", c.tile.early_terminate);
    c.tile.termination_threshold = j.value("termination_threshold", c.tile.termination_threshold);
    if (j.contains("compose_stage")) {
        const std::string stage = j.at("compose_stage").get<std::string>();
        if (stage == "per_splat")
            c.tile.compose_stage = ComposeStage::per_splat;
        else if (stage == "per_pixel")
            c.tile.compose_stage = ComposeStage::per_pixel;
        else
            throw ConfigError("compose_stage must be per_splat or per_pixel");
    }
    c.tile.threads = j.value("threads", c.tile.threads);
    c.preprocess_diffusion = j.value("preprocess_diffusion", c.preprocess_diffusion);
    c.diffusion_iterations = j.value("diffusion_iterations", c.diffusion_iterations);
    c.diffusion_kappa = j.value("diffusion_kappa", c.diffusion_kappa);
    c.diffusion_lambda = j.value("diffusion_lambda", c.diffusion_lambda);
    c.preprocess_clahe = j.value("preprocess_clahe", c.preprocess_clahe);
    c.clahe_tiles = j.value("clahe_tiles", c.clahe_tiles);
    c.clahe_clip = j.value("clahe_clip", c.clahe_clip);
    return c;
}

inline TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Kind::open_failed, "cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::bad_content, "config parse error: " + std::string(e.what()));
    }
    return config_from_json(j);
}

struct TrainEvalRecord {
    int iteration = 0;
    double train_loss = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double mse = 0.0;
    std::size_t primitives = 0;
    double wall_seconds = 0.0;
    double theta_grad_max = 0.0;  // max |d theta| seen since the last eval
};

struct TrainLog {
    nlohmann::json meta;
    std::vector<TrainEvalRecord> records;

    // Determinism contract ignores wall-clock fields.
    bool equals_ignoring_time(const TrainLog& o) const {
        if (records.size() != o.records.size()) return false;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& a = records[i];
            const auto& b = o.records[i];
            if (a.iteration != b.iteration || a.train_loss != b.train_loss || a.psnr != b.psnr ||
                a.ssim != b.ssim || a.mse != b.mse || a.primitives != b.primitives ||
                a.theta_grad_max != b.theta_grad_max)
                return false;
        }
        return true;
    }

    void write_jsonl(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError(IoError::Kind::open_failed, "cannot write log: " + path);
        nlohmann::json m = meta;
        m["type"] = "meta";
        out << m.dump() << "\n";
        for (const auto& r : records) {
            nlohmann::json j;
            j["type"] = "eval";
            j["iteration"] = r.iteration;
            j["train_loss"] = r.train_loss;
            j["psnr"] = r.psnr;
            j["ssim"] = r.ssim;
            j["mse"] = r.mse;
            j["primitives"] = r.primitives;
            j["wall_seconds"] = r.wall_seconds;
            j["theta_grad_max"] = r.theta_grad_max;
            out << j.dump() << "\n";
        }
    }
};

struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

// Seeded random initialization inside the configured box, with DAR seeded
// from the dataset's FoV hints.
inline SceneModel make_init_scene(const Dataset& dataset, const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.rng_seed + 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SceneModel scene;
    scene.sh_degree = cfg.sh_degree;
    scene.ablation_flags = cfg.ablation_flags;
    const Vec3 span = cfg.init_box_max - cfg.init_box_min;
    for (int i = 0; i < cfg.init_count; ++i) {
        Vec3 pos;
        for (int k = 0; k < 3; ++k) pos[k] = cfg.init_box_min[k] + uni(rng) * span[k];
        Vec3 tu(gauss(rng), gauss(rng), gauss(rng));
        tu.normalize();
        Vec3 tv(gauss(rng), gauss(rng), gauss(rng));
        SplatPrimitive p = make_splat(pos, tu, tv, std::log(cfg.init_scale * (0.6 + 0.8 * uni(rng))),
                                      std::log(cfg.init_scale * (0.6 + 0.8 * uni(rng))),
                                      inv_sigmoid(cfg.init_opacity), cfg.sh_degree);
        p.sh_coeffs(0, 0) = 0.15 * uni(rng) / sh::kC0;
        scene.primitives.push_back(p);
    }
    scene.dar = dataset.initial_dar();
    scene.validate();
    return scene;
}

// Preprocessing per the appendix pipeline, applied to training and
// evaluation targets alike.
inline Dataset preprocess_dataset(Dataset ds, const TrainConfig& cfg) {
    for (auto& frame : ds.frames) {
        if (cfg.preprocess_diffusion)
            frame.image = anisotropic_diffusion(frame.image, cfg.diffusion_iterations,
                                                cfg.diffusion_kappa, cfg.diffusion_lambda);
        if (cfg.preprocess_clahe)
            frame.image = clahe(frame.image, cfg.clahe_tiles, cfg.clahe_tiles, cfg.clahe_clip);
    }
    return ds;
}

struct DensifyReport {
    int cloned = 0;
    int split = 0;
    int pruned = 0;
    bool prune_floor_hit = false;
};

// Clones small over-threshold primitives, splits large ones (child scales
// divided by 1.6), prunes nearly transparent ones. Adam moments follow the
// surviving primitives; newcomers start with zero moments. At least one
// primitive is always retained.
inline DensifyReport densify_and_prune(SceneModel& scene, AdamState& state,
                                       const std::vector<double>& mean_grad_norm,
                                       const TrainConfig& cfg, std::mt19937_64& rng) {
    DensifyReport report;
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t n = scene.primitives.size();

    std::vector<SplatPrimitive> out_prims;
    std::vector<PrimitiveGrads> out_m, out_v;
    out_prims.reserve(n + n / 4);

    auto zero_grads = [&]() {
        PrimitiveGrads g;
        g.d_sh_coeffs = ShCoeffs::Zero(3, scene.sh_bases());
        return g;
    };

    auto keep = [&](const SplatPrimitive& p, std::size_t src) {
        out_prims.push_back(p);
        out_m.push_back(state.m.primitives[src]);
        out_v.push_back(state.v.primitives[src]);
    };
    auto fresh = [&](const SplatPrimitive& p) {
        out_prims.push_back(p);
        out_m.push_back(zero_grads());
        out_v.push_back(zero_grads());
    };

    const bool at_capacity = cfg.densify_max_primitives > 0 &&
                             static_cast<int>(n) >= cfg.densify_max_primitives;
    for (std::size_t i = 0; i < n; ++i) {
        const SplatPrimitive& p = scene.primitives[i];
        const bool prune = p.opacity() < cfg.opacity_prune_threshold;
        if (prune) {
            ++report.pruned;
            continue;
        }
        const bool densify = !at_capacity && i < mean_grad_norm.size() &&
                             mean_grad_norm[i] > cfg.grad_threshold;
        if (!densify) {
            keep(p, i);
            continue;
        }
        const double max_scale = std::max(p.scale_u(), p.scale_v());
        if (max_scale <= cfg.densify_scale_threshold) {
            // clone: keep the original, add an offset copy
            keep(p, i);
            SplatPrimitive child = p;
            child.center += 0.3 * (gauss(rng) * p.scale_u() * p.tangent_u +
                                   gauss(rng) * p.scale_v() * p.tangent_v);
            fresh(child);
            ++report.cloned;
        } else {
            // split: replace by two children sampled from the disk
            for (int c = 0; c < 2; ++c) {
                SplatPrimitive child = p;
                child.center += gauss(rng) * p.scale_u() * p.tangent_u +
                                gauss(rng) * p.scale_v() * p.tangent_v;
                child.log_scale_u -= std::log(1.6);
                child.log_scale_v -= std::log(1.6);
                fresh(child);
            }
            ++report.split;
        }
    }

    if (out_prims.empty()) {
        // degenerate guard: retain the most opaque primitive
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (scene.primitives[i].opacity() > scene.primitives[best].opacity()) best = i;
        keep(scene.primitives[best], best);
        --report.pruned;
        report.prune_floor_hit = true;
    }

    scene.primitives = std::move(out_prims);
    state.m.primitives = std::move(out_m);
    state.v.primitives = std::move(out_v);
    return report;
}

// Metrics are measured at reference fidelity: generous cutoff, no early
// termination. Training renders keep the fast settings.
inline TileConfig eval_fidelity(TileConfig tile) {
    tile.gaussian_cutoff = std::max(tile.gaussian_cutoff, 12.0);
    tile.early_terminate = false;
    tile.max_splats_per_pixel = 0;
    return tile;
}

namespace trainer_detail {

struct EvalResult {
    double psnr = 0.0, ssim = 0.0, mse = 0.0;
};

inline EvalResult evaluate(const SceneModel& scene, const Dataset& ds,
                           const std::vector<int>& indices, const TileConfig& tile_in) {
    EvalResult res;
    if (indices.empty()) return res;
    const TileConfig tile = eval_fidelity(tile_in);
    for (int idx : indices) {
        const RenderOutput out = render(scene, ds.frames[idx].view, tile);
        const Image rendered = clamped(out.intensity);
        res.psnr += psnr(rendered, ds.frames[idx].image);
        res.ssim += ssim(rendered, ds.frames[idx].image);
        res.mse += mse(rendered, ds.frames[idx].image);
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    res.psnr *= inv;
    res.ssim *= inv;
    res.mse *= inv;
    return res;
}

}  // namespace trainer_detail

// The full optimization loop: round-robin view sampling, backward + Adam,
// periodic densification, held-out evaluation and checkpointing. When
// out_dir is empty nothing is written to disk.
inline std::pair<SceneModel, TrainLog> train(const Dataset& raw_dataset, SceneModel scene,
                                             const TrainConfig& cfg,
                                             const std::string& out_dir = "") {
    namespace fs = std::filesystem;
    cfg.validate();
    if (raw_dataset.frames.empty() || raw_dataset.train_indices.empty())
        throw PreconditionError("train: dataset has no training views");
    scene.ablation_flags = cfg.ablation_flags;
    scene.validate();

    const Dataset dataset = preprocess_dataset(raw_dataset, cfg);
    if (!out_dir.empty()) fs::create_directories(out_dir);

    TrainLog log;
    config_to_json(log.meta, cfg);
    log.meta["ablation_flags"] = cfg.ablation_flags;
    log.meta["n_train_views"] = dataset.train_indices.size();
    log.meta["n_test_views"] = dataset.test_indices.size();

    AdamState state = AdamState::zero_like(scene);
    std::mt19937_64 densify_rng(cfg.rng_seed + 0x51ed2701);
    std::vector<double> grad_norm_accum(scene.primitives.size(), 0.0);
    std::vector<int> grad_norm_count(scene.primitives.size(), 0);
    double theta_grad_max = 0.0;
    double last_loss = 0.0;

    const auto t_start = std::chrono::steady_clock::now();
    for (int it = 1; it <= cfg.iterations; ++it) {
        const int view_idx =
            dataset.train_indices[(it - 1) % dataset.train_indices.size()];
        const FrameRecord& frame = dataset.frames[view_idx];

        const auto [report, grads] =
            backward(scene, frame.view, cfg.tile, frame.image, cfg.lambda_dssim);
        last_loss = report.total;
        if (!std::isfinite(report.total) || !grads.all_finite()) {
            if (!out_dir.empty())
                save_checkpoint(scene, (fs::path(out_dir) / "ckpt_diverged.ugsc").string());
            throw TrainingDiverged("non-finite loss at iteration " + std::to_string(it));
        }

        theta_grad_max = std::max({theta_grad_max, std::abs(grads.d_theta_x),
                                   std::abs(grads.d_theta_y)});
        for (std::size_t i = 0; i < grads.primitives.size(); ++i) {
            grad_norm_accum[i] += grads.primitives[i].d_center.norm();
            grad_norm_count[i] += 1;
        }

        adam_step(scene, grads, state, cfg.lrs);

        if (it >= cfg.densify_from && it <= cfg.densify_until && it % cfg.densify_every == 0) {
            std::vector<double> mean(grad_norm_accum.size(), 0.0);
            for (std::size_t i = 0; i < mean.size(); ++i)
                mean[i] = grad_norm_count[i] > 0 ? grad_norm_accum[i] / grad_norm_count[i] : 0.0;
            densify_and_prune(scene, state, mean, cfg, densify_rng);
            grad_norm_accum.assign(scene.primitives.size(), 0.0);
            grad_norm_count.assign(scene.primitives.size(), 0);
        }

        if (it % cfg.eval_every == 0 || it == cfg.iterations) {
            const auto eval = trainer_detail::evaluate(
                scene, dataset,
                dataset.test_indices.empty() ? dataset.train_indices : dataset.test_indices,
                cfg.tile);
            TrainEvalRecord rec;
            rec.iteration = it;
            rec.train_loss = last_loss;
            rec.psnr = eval.psnr;
            rec.ssim = eval.ssim;
            rec.mse = eval.mse;
            rec.primitives = scene.primitives.size();
            rec.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                    .count();
            rec.theta_grad_max = theta_grad_max;
            theta_grad_max = 0.0;
            if (log.records.empty() || log.records.back().iteration != it)
                log.records.push_back(rec);
        }

        if (!out_dir.empty() && (it % cfg.checkpoint_every == 0 || it == cfg.iterations)) {
            save_checkpoint(scene,
                            (fs::path(out_dir) / ("ckpt_" + std::to_string(it) + ".ugsc")).string());
        }
    }

    scene.validate();
    if (!out_dir.empty()) log.write_jsonl((fs::path(out_dir) / "train_log.jsonl").string());
    return {std::move(scene), std::move(log)};
}

// ---------------------------------------------------------------------------
// Ablation wiring.
// ---------------------------------------------------------------------------

inline std::uint32_t ablation_flags_for(const std::string& variant) {
    if (variant == "full") return kAblateNone;
    if (variant == "w/o I_att" || variant == "no_att") return kDisableAtt;
    if (variant == "w/o I_refl & I_scat" || variant == "no_refl_scat") return kDisableReflScat;
    if (variant == "w/o DAR" || variant == "no_dar") return kDisableDar;
    if (variant == "w/o PD Rendering" || variant == "no_pd") return kDisablePd;
    throw ConfigError("unknown ablation variant: " + variant);
}

// The high-order-SH variant swaps the PD operator for a degree-3 basis.
inline SceneModel widen_sh_degree(const SceneModel& scene, int degree) {
    SceneModel out = scene;
    out.sh_degree = degree;
    const int bases = sh::basis_count(degree);
    for (auto& p : out.primitives) {
        ShCoeffs wide = ShCoeffs::Zero(3, bases);
        wide.leftCols(p.sh_coeffs.cols()) = p.sh_coeffs;
        p.sh_coeffs = wide;
    }
    return out;
}

inline std::pair<SceneModel, TrainLog> run_ablation(const Dataset& dataset,
                                                    const SceneModel& init_scene,
                                                    const TrainConfig& base_cfg,
                                                    const std::string& variant,
                                                    const std::string& out_dir = "") {
    TrainConfig cfg = base_cfg;
    cfg.ablation_flags = ablation_flags_for(variant);

    SceneModel init = init_scene;
    if (cfg.ablation_flags & kDisablePd) {
        cfg.sh_degree = 3;
        if (init.sh_degree < 3) init = widen_sh_degree(init, 3);
    }

    auto [scene, log] = train(dataset, std::move(init), cfg, out_dir);
    log.meta["variant"] = variant;
    if (!out_dir.empty())
        log.write_jsonl((std::filesystem::path(out_dir) / "train_log.jsonl").string());
    return {std::move(scene), std::move(log)};
}

}  // namespace echosplat
