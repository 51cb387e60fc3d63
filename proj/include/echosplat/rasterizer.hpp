// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

#include "echosplat/acoustics.hpp"
#include "echosplat/common.hpp"
#include "echosplat/geometry.hpp"
#include "echosplat/image.hpp"
#include "echosplat/scene.hpp"
#include "echosplat/sh.hpp"
#include "echosplat/threading.hpp"

namespace echosplat {

enum class ComposeStage { per_splat, per_pixel };

struct TileConfig {
    int tile_size = 16;
    double gaussian_cutoff = 3.0;     // binning extent in std-devs
    int max_splats_per_pixel = 0;     // 0 = unlimited
    bool early_terminate = true;
    double termination_threshold = 1e-4;
    ComposeStage compose_stage = ComposeStage::per_splat;
    int threads = 0;                  // 0 = hardware concurrency

    int resolved_threads() const {
        if (threads > 0) return threads;
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }
};

struct RenderOutput {
    Image intensity;   // channel 0 of the composited response, unclamped
    Image depth;       // opacity-weighted mean hit depth, 0 where uncovered
    Image alpha_acc;   // accumulated opacity
};

struct BenchReport {
    std::vector<double> frame_seconds;
    double mean_fps = 0.0;
    double binning_seconds = 0.0;
    double intersect_seconds = 0.0;
    double composite_seconds = 0.0;
};

namespace raster {

inline constexpr double kDepthEps = 1e-12;

struct SplatAux {
    double inv_var_u = 1.0;  // exp(-2 log_scale_u)
    double inv_var_v = 1.0;
    double sigma_u = 1.0;
    double sigma_v = 1.0;
    double opacity = 0.5;
    // Conservative projected pixel bounds of the cutoff ellipse; pixels
    // outside are rejected before the intersection solve. Unbounded in the
    // reference path and for near-plane straddlers.
    double x_min = -std::numeric_limits<double>::infinity();
    double x_max = std::numeric_limits<double>::infinity();
    double y_min = -std::numeric_limits<double>::infinity();
    double y_max = std::numeric_limits<double>::infinity();
};

struct Hit {
    int idx;
    double u, v, z, g, a;
};

// Everything derived from (scene, view, cfg) that the pixel loops need.
struct Context {
    const SceneModel* scene = nullptr;
    const CameraView* view = nullptr;
    TileConfig cfg;
    Intrinsics intr;
    ComposeContext compose_ctx;
    Vec3 camera_center = Vec3::Zero();
    std::vector<PreparedSplat> prep;
    std::vector<SplatAux> aux;

    // Mahalanobis cutoff applied per pixel (squared); +inf in the reference
    // path. Makes the hit set independent of the tile layout, so tiling is
    // purely an acceleration structure.
    double cutoff_sq = std::numeric_limits<double>::infinity();

    // Contiguous per-tile bin entry: the projected bounds again, so the
    // reject path streams through memory instead of chasing aux[idx].
    struct BinEntry {
        double x_min, x_max, y_min, y_max;
        int idx;
    };

    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> tile_splats;       // per tile, ascending indices
    std::vector<std::vector<BinEntry>> tile_entries;  // same order as tile_splats
};

inline void check_render_inputs(const SceneModel& scene, const CameraView& view) {
    if (scene.primitives.empty()) throw PreconditionError("render requires a non-empty scene");
    if (view.image_width < 8 || view.image_height < 8)
        throw PreconditionError("image dimensions must be at least 8 pixels");
    scene.validate_render();
}

inline Context make_context(const SceneModel& scene, const CameraView& view, const TileConfig& cfg,
                            bool binned) {
    check_render_inputs(scene, view);
    if (cfg.tile_size < 4) throw ConfigError("tile_size must be >= 4");
    if (cfg.gaussian_cutoff <= 0.0) throw ConfigError("gaussian_cutoff must be positive");

    Context c;
    c.scene = &scene;
    c.view = &view;
    c.cfg = cfg;
    c.intr = intrinsics_from_dar(scene.dar, view.image_width, view.image_height);
    c.compose_ctx = make_compose_context(scene.acoustics, scene.ablation_flags);
    c.camera_center = view.camera_center_world();

    const std::size_t n = scene.primitives.size();
    c.prep.resize(n);
    c.aux.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = scene.primitives[i];
        c.prep[i] = prepare_splat(p, view);
        auto& a = c.aux[i];
        a.sigma_u = p.scale_u();
        a.sigma_v = p.scale_v();
        a.inv_var_u = std::exp(-2.0 * p.log_scale_u);
        a.inv_var_v = std::exp(-2.0 * p.log_scale_v);
        a.opacity = p.opacity();
    }

    if (!binned) return c;

    c.cutoff_sq = cfg.gaussian_cutoff * cfg.gaussian_cutoff;
    c.tiles_x = (view.image_width + cfg.tile_size - 1) / cfg.tile_size;
    c.tiles_y = (view.image_height + cfg.tile_size - 1) / cfg.tile_size;
    c.tile_splats.assign(static_cast<std::size_t>(c.tiles_x) * c.tiles_y, {});
    c.tile_entries.assign(c.tile_splats.size(), {});

    const double cut = cfg.gaussian_cutoff;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& prep = c.prep[i];
        const auto& aux = c.aux[i];
        const double reach = cut * (aux.sigma_u + aux.sigma_v);
        const double zc = prep.q_c.z();
        if (zc + reach <= kNearPlane) continue;  // entire cutoff disk behind near plane

        int tx0 = 0, ty0 = 0, tx1 = c.tiles_x - 1, ty1 = c.tiles_y - 1;
        if (zc - reach > kNearPlane) {
            // Fully in front: bound the projected cutoff ellipse by sampling
            // its boundary, then inflate conservatively.
            double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
            for (int s = 0; s < 9; ++s) {
                Vec3 pt = prep.q_c;
                if (s > 0) {
                    const double phi = (s - 1) * (M_PI / 4.0);
                    pt += cut * (std::cos(phi) * aux.sigma_u * prep.q_u +
                                 std::sin(phi) * aux.sigma_v * prep.q_v);
                }
                const double px = c.intr.f_x * pt.x() / pt.z() + c.intr.c_x;
                const double py = c.intr.f_y * pt.y() / pt.z() + c.intr.c_y;
                xmin = std::min(xmin, px);
                xmax = std::max(xmax, px);
                ymin = std::min(ymin, py);
                ymax = std::max(ymax, py);
            }
            const double hx = 0.65 * (xmax - xmin) + 2.0;  // 1.3x half extent + margin
            const double hy = 0.65 * (ymax - ymin) + 2.0;
            const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
            c.aux[i].x_min = cx - hx;
            c.aux[i].x_max = cx + hx;
            c.aux[i].y_min = cy - hy;
            c.aux[i].y_max = cy + hy;
            const int px0 = static_cast<int>(std::floor(cx - hx));
            const int px1 = static_cast<int>(std::ceil(cx + hx));
            const int py0 = static_cast<int>(std::floor(cy - hy));
            const int py1 = static_cast<int>(std::ceil(cy + hy));
            if (px1 < 0 || py1 < 0 || px0 >= view.image_width || py0 >= view.image_height)
                continue;
            tx0 = std::clamp(px0 / cfg.tile_size, 0, c.tiles_x - 1);
            tx1 = std::clamp(px1 / cfg.tile_size, 0, c.tiles_x - 1);
            ty0 = std::clamp(py0 / cfg.tile_size, 0, c.tiles_y - 1);
            ty1 = std::clamp(py1 / cfg.tile_size, 0, c.tiles_y - 1);
        }
        // else: straddles the near plane; keep the conservative full range.
        const auto& a = c.aux[i];
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                const std::size_t t = static_cast<std::size_t>(ty) * c.tiles_x + tx;
                c.tile_splats[t].push_back(static_cast<int>(i));
                c.tile_entries[t].push_back(
                    {a.x_min, a.x_max, a.y_min, a.y_max, static_cast<int>(i)});
            }
        }
    }
    return c;
}

// SH evaluation without the public-API validation; direction is unit by
// construction.
inline Vec3 eval_sh_unchecked(const Vec3& d, const ShCoeffs& coeffs, int degree, Vec3* preclamp) {
    double basis_vals[sh::kMaxBases];
    sh::basis(d, degree, basis_vals);
    const int bases = sh::basis_count(degree);
    Vec3 raw;
    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.5;
        for (int b = 0; b < bases; ++b) acc += coeffs(ch, b) * basis_vals[b];
        raw[ch] = acc;
    }
    if (preclamp) *preclamp = raw;
    return raw.cwiseMax(0.0);
}

// One candidate against one pixel ray: intersection, cutoff, Gaussian weight.
inline void test_candidate(const Context& c, int idx, const Vec4& h_x, const Vec4& h_y,
                           std::vector<Hit>& out) {
    const RaySplatHit hit = intersect_prepared(c.prep[idx], h_x, h_y);
    if (!hit.valid) return;
    const auto& aux = c.aux[idx];
    const double q = hit.u * hit.u * aux.inv_var_u + hit.v * hit.v * aux.inv_var_v;
    if (q > c.cutoff_sq) return;
    const double g = std::exp(-0.5 * q);
    out.push_back(Hit{idx, hit.u, hit.v, hit.depth_z, g, aux.opacity * g});
}

inline void sort_and_cap(const Context& c, std::vector<Hit>& out) {
    std::sort(out.begin(), out.end(), [](const Hit& a, const Hit& b) {
        if (a.z != b.z) return a.z < b.z;
        return a.idx < b.idx;
    });
    if (c.cfg.max_splats_per_pixel > 0 &&
        out.size() > static_cast<std::size_t>(c.cfg.max_splats_per_pixel))
        out.resize(static_cast<std::size_t>(c.cfg.max_splats_per_pixel));
}

// Binned path: the contiguous bbox entries reject most candidates before
// the solve. Depth-sorted with index tie-break; shared by the tiled
// renderer and the backward pass.
inline void gather_hits(const Context& c, const std::vector<Context::BinEntry>& entries,
                        double px, double py, const Vec4& h_x, const Vec4& h_y,
                        std::vector<Hit>& out) {
    out.clear();
    for (const auto& e : entries) {
        if (px < e.x_min || px > e.x_max || py < e.y_min || py > e.y_max) continue;
        test_candidate(c, e.idx, h_x, h_y, out);
    }
    sort_and_cap(c, out);
}

// Reference path: every primitive, no bbox rejection, no cutoff.
inline void gather_hits_all(const Context& c, double, double, const Vec4& h_x, const Vec4& h_y,
                            std::vector<Hit>& out) {
    out.clear();
    for (int idx = 0; idx < static_cast<int>(c.prep.size()); ++idx)
        test_candidate(c, idx, h_x, h_y, out);
    sort_and_cap(c, out);
}

struct PixelResult {
    double intensity = 0.0;
    double depth = 0.0;
    double alpha = 0.0;
};

// Front-to-back alpha compositing of the sorted hit list.
inline PixelResult composite(const Context& c, const std::vector<Hit>& hits, bool allow_terminate) {
    const SceneModel& scene = *c.scene;
    PixelResult res;
    double transmittance = 1.0;
    double depth_num = 0.0;
    Vec3 cbar = Vec3::Zero();

    const bool per_splat = c.cfg.compose_stage == ComposeStage::per_splat;
    for (const Hit& h : hits) {
        const double w = h.a * transmittance;
        const auto& prim = scene.primitives[h.idx];
        const Vec3 xw = splat_point(prim, h.u, h.v);
        const Vec3 dir = (xw - c.camera_center).normalized();
        const Vec3 base = eval_sh_unchecked(dir, prim.sh_coeffs, scene.sh_degree, nullptr);
        if (per_splat) {
            const Vec3 r = compose(base, h.z, c.compose_ctx);
            res.intensity += r[0] * w;
        } else {
            cbar += base * w;
        }
        depth_num += h.z * w;
        res.alpha += w;
        transmittance *= (1.0 - h.a);
        if (allow_terminate && c.cfg.early_terminate &&
            transmittance < c.cfg.termination_threshold)
            break;
    }
    res.depth = depth_num / std::max(res.alpha, kDepthEps);
    if (!per_splat) res.intensity = compose(cbar, res.depth, c.compose_ctx)[0];
    return res;
}

struct StageTimers {
    double intersect_seconds = 0.0;
    double composite_seconds = 0.0;
    std::mutex mutex;
};

template <bool kTimed>
inline void run_tiles(const Context& c, RenderOutput& out, bool allow_terminate,
                      StageTimers* timers) {
    using clock = std::chrono::steady_clock;
    const int w = c.view->image_width;
    const int h = c.view->image_height;
    const int tile = c.cfg.tile_size;
    const std::size_t n_tiles = c.tile_splats.size();

    parallel_for(n_tiles, c.cfg.resolved_threads(), [&](std::size_t t) {
        const int tx = static_cast<int>(t) % c.tiles_x;
        const int ty = static_cast<int>(t) / c.tiles_x;
        const int x0 = tx * tile, x1 = std::min(w, x0 + tile);
        const int y0 = ty * tile, y1 = std::min(h, y0 + tile);
        const std::vector<Context::BinEntry>& candidates = c.tile_entries[t];

        std::vector<Hit> hits;
        double isec = 0.0, comp = 0.0;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                auto t0 = kTimed ? clock::now() : clock::time_point{};
                const auto [hx, hy] = pixel_ray_planes(x + 0.5, y + 0.5, c.intr);
                gather_hits(c, candidates, x + 0.5, y + 0.5, hx, hy, hits);
                auto t1 = kTimed ? clock::now() : clock::time_point{};
                const PixelResult px = composite(c, hits, allow_terminate);
                if (kTimed) {
                    auto t2 = clock::now();
                    isec += std::chrono::duration<double>(t1 - t0).count();
                    comp += std::chrono::duration<double>(t2 - t1).count();
                }
                out.intensity.at(x, y) = px.intensity;
                out.depth.at(x, y) = px.depth;
                out.alpha_acc.at(x, y) = px.alpha;
            }
        }
        if (kTimed && timers) {
            std::lock_guard<std::mutex> lock(timers->mutex);
            timers->intersect_seconds += isec;
            timers->composite_seconds += comp;
        }
    });
}

}  // namespace raster

// Tile-binned, depth-sorted, front-to-back composited forward render.
inline RenderOutput render(const SceneModel& scene, const CameraView& view, const TileConfig& cfg,
                           raster::StageTimers* timers = nullptr, double* binning_seconds = nullptr) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const raster::Context c = raster::make_context(scene, view, cfg, /*binned=*/true);
    const auto t1 = clock::now();
    if (binning_seconds) *binning_seconds += std::chrono::duration<double>(t1 - t0).count();

    RenderOutput out{Image(view.image_width, view.image_height),
                     Image(view.image_width, view.image_height),
                     Image(view.image_width, view.image_height)};
    if (timers)
        raster::run_tiles<true>(c, out, /*allow_terminate=*/true, timers);
    else
        raster::run_tiles<false>(c, out, /*allow_terminate=*/true, nullptr);
    return out;
}

// Correctness oracle: every primitive against every pixel, exact depth sort,
// no cutoff, no per-pixel cap, no early termination. Only compose_stage and
// the thread count are honored from cfg.
inline RenderOutput reference_render(const SceneModel& scene, const CameraView& view,
                                     const TileConfig& cfg = {}) {
    raster::Context c = raster::make_context(scene, view, cfg, /*binned=*/false);
    c.cfg.max_splats_per_pixel = 0;

    RenderOutput out{Image(view.image_width, view.image_height),
                     Image(view.image_width, view.image_height),
                     Image(view.image_width, view.image_height)};
    const int h = view.image_height;
    parallel_for(static_cast<std::size_t>(h), c.cfg.resolved_threads(), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        std::vector<raster::Hit> hits;
        for (int x = 0; x < view.image_width; ++x) {
            const auto [hx, hy] = pixel_ray_planes(x + 0.5, y + 0.5, c.intr);
            raster::gather_hits_all(c, x + 0.5, y + 0.5, hx, hy, hits);
            const raster::PixelResult px = raster::composite(c, hits, /*allow_terminate=*/false);
            out.intensity.at(x, y) = px.intensity;
            out.depth.at(x, y) = px.depth;
            out.alpha_acc.at(x, y) = px.alpha;
        }
    });
    return out;
}

// Renders `frames` times and reports wall-clock throughput with a per-stage
// breakdown (binning / intersect / composite, summed across workers).
inline BenchReport bench(const SceneModel& scene, const CameraView& view, const TileConfig& cfg,
                         int frames) {
    if (frames < 1) throw PreconditionError("bench requires frames >= 1");
    using clock = std::chrono::steady_clock;
    BenchReport report;
    raster::StageTimers timers;
    for (int f = 0; f < frames; ++f) {
        const auto t0 = clock::now();
        (void)render(scene, view, cfg, &timers, &report.binning_seconds);
        const auto t1 = clock::now();
        report.frame_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    report.intersect_seconds = timers.intersect_seconds;
    report.composite_seconds = timers.composite_seconds;
    const double total =
        std::accumulate(report.frame_seconds.begin(), report.frame_seconds.end(), 0.0);
    report.mean_fps = frames / total;
    return report;
}

// Write-out helpers: clamped 8-bit intensity, raw float depth plus a
// normalized preview.
inline Image clamped(const Image& img) {
    Image out = img;
    for (double& v : out.px) v = clamp01(v);
    return out;
}

inline Image normalized_preview(const Image& img) {
    Image out = img;
    const auto [lo, hi] = std::minmax_element(out.px.begin(), out.px.end());
    const double span = *hi - *lo;
    if (span <= 0.0) {
        std::fill(out.px.begin(), out.px.end(), 0.0);
        return out;
    }
    for (double& v : out.px) v = (v - *lo) / span;
    return out;
}

}  // namespace echosplat
