// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "echosplat/metrics.hpp"
#include "echosplat/rasterizer.hpp"

namespace echosplat {

// ---------------------------------------------------------------------------
// Gradient containers, mirror-shaped to the learnable scene fields.
// ---------------------------------------------------------------------------

struct PrimitiveGrads {
    Vec3 d_center = Vec3::Zero();
    Vec3 d_tangent_u = Vec3::Zero();
    Vec3 d_tangent_v = Vec3::Zero();
    double d_log_scale_u = 0.0;
    double d_log_scale_v = 0.0;
    double d_opacity_logit = 0.0;
    ShCoeffs d_sh_coeffs;

    void add(const PrimitiveGrads& o) {
        d_center += o.d_center;
        d_tangent_u += o.d_tangent_u;
        d_tangent_v += o.d_tangent_v;
        d_log_scale_u += o.d_log_scale_u;
        d_log_scale_v += o.d_log_scale_v;
        d_opacity_logit += o.d_opacity_logit;
        d_sh_coeffs += o.d_sh_coeffs;
    }
};

struct GradientSet {
    std::vector<PrimitiveGrads> primitives;
    double d_beta_raw = 0.0;
    Mat3 d_gamma = Mat3::Zero();  // diagonal entries stay structurally zero
    double d_raw_w_att = 0.0;
    double d_raw_w_refl = 0.0;
    double d_raw_w_scat = 0.0;
    double d_theta_x = 0.0;
    double d_theta_y = 0.0;

    static GradientSet zero_like(const SceneModel& scene) {
        GradientSet g;
        g.primitives.resize(scene.primitives.size());
        const int bases = scene.sh_bases();
        for (auto& p : g.primitives) p.d_sh_coeffs = ShCoeffs::Zero(3, bases);
        return g;
    }

    bool all_finite() const {
        for (const auto& p : primitives) {
            if (!p.d_center.allFinite() || !p.d_tangent_u.allFinite() ||
                !p.d_tangent_v.allFinite() || !p.d_sh_coeffs.allFinite())
                return false;
            if (!std::isfinite(p.d_log_scale_u) || !std::isfinite(p.d_log_scale_v) ||
                !std::isfinite(p.d_opacity_logit))
                return false;
        }
        return d_gamma.allFinite() && std::isfinite(d_beta_raw) && std::isfinite(d_raw_w_att) &&
               std::isfinite(d_raw_w_refl) && std::isfinite(d_raw_w_scat) &&
               std::isfinite(d_theta_x) && std::isfinite(d_theta_y);
    }
};

struct LossReport {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double lambda_dssim = 0.0;
};

// ---------------------------------------------------------------------------
// Loss: (1 - lambda) L1 + lambda (1 - SSIM) / 2
// ---------------------------------------------------------------------------

inline LossReport loss(const Image& rendered, const Image& target, double lambda_dssim) {
    if (!rendered.same_dims(target)) throw PreconditionError("loss: image dimensions differ");
    for (double v : target.px)
        if (!std::isfinite(v)) throw PreconditionError("loss: non-finite target pixel");

    LossReport rep;
    rep.lambda_dssim = lambda_dssim;
    double acc = 0.0;
    for (std::size_t i = 0; i < rendered.px.size(); ++i)
        acc += std::abs(rendered.px[i] - target.px[i]);
    rep.l1 = acc / static_cast<double>(rendered.px.size());
    rep.dssim = (1.0 - ssim(rendered, target)) / 2.0;
    rep.total = (1.0 - lambda_dssim) * rep.l1 + lambda_dssim * rep.dssim;
    return rep;
}

// dLoss/drendered, reusing the SSIM fields for the structural term.
inline Image loss_backward_image(const Image& rendered, const Image& target, double lambda_dssim,
                                 LossReport* report) {
    if (!rendered.same_dims(target)) throw PreconditionError("loss: image dimensions differ");
    for (double v : target.px)
        if (!std::isfinite(v)) throw PreconditionError("loss: non-finite target pixel");

    const ssim_detail::Fields fields = ssim_detail::compute(rendered, target);
    double acc = 0.0;
    for (std::size_t i = 0; i < rendered.px.size(); ++i)
        acc += std::abs(rendered.px[i] - target.px[i]);

    LossReport rep;
    rep.lambda_dssim = lambda_dssim;
    rep.l1 = acc / static_cast<double>(rendered.px.size());
    rep.dssim = (1.0 - fields.mean) / 2.0;
    rep.total = (1.0 - lambda_dssim) * rep.l1 + lambda_dssim * rep.dssim;
    if (report) *report = rep;

    const Image ssim_grad = ssim_backward(rendered, target, fields);
    Image grad(rendered.width, rendered.height);
    const double inv_n = 1.0 / static_cast<double>(rendered.px.size());
    for (std::size_t i = 0; i < rendered.px.size(); ++i) {
        const double diff = rendered.px[i] - target.px[i];
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        grad.px[i] =
            (1.0 - lambda_dssim) * sign * inv_n - 0.5 * lambda_dssim * ssim_grad.px[i];
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Reverse-mode backward through the full render.
// ---------------------------------------------------------------------------

namespace autodiff_detail {

struct HitRecord {
    int idx;
    double u, v, z, g, a;
    double transmittance;  // before this hit
    Vec3 base;             // clamped SH response
    Vec3 preclamp;
    Vec3 dir;
    double dir_norm;       // |X_w - camera center|
    double r0;             // composed channel-0 response (per-splat stage)
};

struct TileAccum {
    std::vector<PrimitiveGrads> prim;  // parallel to the tile candidate list
    double beta_raw = 0.0;
    Mat3 gamma = Mat3::Zero();
    double raw_w_att = 0.0, raw_w_refl = 0.0, raw_w_scat = 0.0;
    double theta_x = 0.0, theta_y = 0.0;
};

// Adjoint of compose() at (c, z): distributes g_r into the base response,
// the depth and the global acoustic parameters.
inline void compose_backward(const raster::Context& ctx, const Vec3& c, double z, const Vec3& g_r,
                             Vec3& g_c, double& g_z, TileAccum& acc) {
    const ComposeContext& cc = ctx.compose_ctx;
    const AcousticParams& params = ctx.scene->acoustics;
    if (cc.flags & kDisablePd) {
        g_c += g_r;
        return;
    }
    g_c += g_r;
    if (!(cc.flags & kDisableAtt)) {
        g_z += -cc.alpha * cc.w_att * g_r[0];
        acc.raw_w_att += g_r[0] * (-cc.alpha * z) * softplus_grad(params.raw_w_att);
    }
    if (!(cc.flags & kDisableReflScat)) {
        const Vec3 c_sq = c.cwiseProduct(c);
        const double refl_dot = g_r.dot(c_sq);
        g_c += 2.0 * cc.w_refl * cc.beta * c.cwiseProduct(g_r);
        acc.beta_raw += cc.w_refl * refl_dot * softplus_grad(params.beta_raw);
        acc.raw_w_refl += cc.beta * refl_dot * softplus_grad(params.raw_w_refl);

        const Vec3 gamma_c = cc.gamma * c;
        g_c += cc.w_scat *
               (cc.gamma.transpose() * g_r.cwiseProduct(c) + g_r.cwiseProduct(gamma_c));
        acc.raw_w_scat += g_r.dot(gamma_c.cwiseProduct(c)) * softplus_grad(params.raw_w_scat);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) acc.gamma(i, j) += cc.w_scat * g_r[i] * c[j] * c[i];
    }
}

// Adjoint of one hit: SH response, tangent-plane solve, Gaussian weight and
// depth, given the upstream gradients (g_c on the base response, g_z on the
// hit depth, g_a on the effective alpha).
inline void hit_backward(const raster::Context& ctx, const HitRecord& rec, double nx, double ny,
                         Vec3 g_c, double g_z, double g_a, PrimitiveGrads& pg, TileAccum& acc) {
    const SceneModel& scene = *ctx.scene;
    const SplatPrimitive& prim = scene.primitives[rec.idx];
    const PreparedSplat& prep = ctx.prep[rec.idx];
    const raster::SplatAux& aux = ctx.aux[rec.idx];

    double g_u = 0.0, g_v = 0.0;
    Vec3 g_qu = Vec3::Zero(), g_qv = Vec3::Zero(), g_qc = Vec3::Zero();

    // SH response -> direction and coefficients.
    Vec3 g_dir = Vec3::Zero();
    {
        double basis_vals[sh::kMaxBases];
        Vec3 basis_grads[sh::kMaxBases];
        sh::basis_grad(rec.dir, scene.sh_degree, basis_vals, basis_grads);
        const int bases = scene.sh_bases();
        for (int ch = 0; ch < 3; ++ch) {
            if (rec.preclamp[ch] <= 0.0 || g_c[ch] == 0.0) continue;
            for (int b = 0; b < bases; ++b) {
                pg.d_sh_coeffs(ch, b) += g_c[ch] * basis_vals[b];
                g_dir += g_c[ch] * prim.sh_coeffs(ch, b) * basis_grads[b];
            }
        }
    }

    // Unit direction -> world point (camera center is constant).
    const Vec3 g_w = (g_dir - rec.dir * rec.dir.dot(g_dir)) / rec.dir_norm;
    const Vec3 g_xw = g_w;
    pg.d_center += g_xw;
    pg.d_tangent_u += g_xw * rec.u;
    pg.d_tangent_v += g_xw * rec.v;
    g_u += g_xw.dot(prim.tangent_u);
    g_v += g_xw.dot(prim.tangent_v);

    // Hit depth z = q_c.z + u q_u.z + v q_v.z.
    g_u += g_z * prep.q_u.z();
    g_v += g_z * prep.q_v.z();
    g_qu[2] += g_z * rec.u;
    g_qv[2] += g_z * rec.v;
    g_qc[2] += g_z;

    // Effective alpha a = opacity * G(u, v).
    {
        const double op = aux.opacity;
        const double g_opacity = g_a * rec.g;
        const double g_gauss = g_a * op;
        pg.d_opacity_logit += g_opacity * op * (1.0 - op);
        const double g_q = -0.5 * rec.g * g_gauss;
        g_u += g_q * 2.0 * rec.u * aux.inv_var_u;
        g_v += g_q * 2.0 * rec.v * aux.inv_var_v;
        pg.d_log_scale_u += g_q * rec.u * rec.u * (-2.0 * aux.inv_var_u);
        pg.d_log_scale_v += g_q * rec.v * rec.v * (-2.0 * aux.inv_var_v);
    }

    // Adjoint of the 2x2 tangent-plane solve.
    {
        const double a1 = nx * prep.q_u.z() - prep.q_u.x();
        const double b1 = nx * prep.q_v.z() - prep.q_v.x();
        const double a2 = ny * prep.q_u.z() - prep.q_u.y();
        const double b2 = ny * prep.q_v.z() - prep.q_v.y();
        const double det = a1 * b2 - a2 * b1;
        const double lam1 = (b2 * g_u - a2 * g_v) / det;
        const double lam2 = (-b1 * g_u + a1 * g_v) / det;
        const double g_a1 = -lam1 * rec.u, g_b1 = -lam1 * rec.v, g_d1 = -lam1;
        const double g_a2 = -lam2 * rec.u, g_b2 = -lam2 * rec.v, g_d2 = -lam2;

        const double g_nx = g_a1 * prep.q_u.z() + g_b1 * prep.q_v.z() + g_d1 * prep.q_c.z();
        const double g_ny = g_a2 * prep.q_u.z() + g_b2 * prep.q_v.z() + g_d2 * prep.q_c.z();
        acc.theta_x += g_nx * nx;  // nx scales with e^theta_x
        acc.theta_y += g_ny * ny;

        g_qu[0] -= g_a1;
        g_qu[1] -= g_a2;
        g_qu[2] += g_a1 * nx + g_a2 * ny;
        g_qv[0] -= g_b1;
        g_qv[1] -= g_b2;
        g_qv[2] += g_b1 * nx + g_b2 * ny;
        g_qc[0] -= g_d1;
        g_qc[1] -= g_d2;
        g_qc[2] += g_d1 * nx + g_d2 * ny;
    }

    // Camera-frame quantities back to world-frame primitive fields.
    const Mat3 rt = ctx.view->rotation().transpose();
    pg.d_tangent_u += rt * g_qu;
    pg.d_tangent_v += rt * g_qv;
    pg.d_center += rt * g_qc;
}

}  // namespace autodiff_detail

// Exact gradients of the image loss with respect to every learnable scene
// field. The forward pass is re-run internally with the same configuration,
// so the gradients correspond exactly to render(scene, view, cfg).
inline std::pair<LossReport, GradientSet> backward(const SceneModel& scene, const CameraView& view,
                                                   const TileConfig& cfg, const Image& target,
                                                   double lambda_dssim = 0.2) {
    using namespace autodiff_detail;
    if (target.width != view.image_width || target.height != view.image_height)
        throw PreconditionError("backward: target dimensions do not match the view");

    const raster::Context ctx = raster::make_context(scene, view, cfg, /*binned=*/true);
    RenderOutput out{Image(view.image_width, view.image_height),
                     Image(view.image_width, view.image_height),
                     Image(view.image_width, view.image_height)};
    raster::run_tiles<false>(ctx, out, /*allow_terminate=*/true, nullptr);

    LossReport report;
    const Image grad_image = loss_backward_image(out.intensity, target, lambda_dssim, &report);

    const bool per_splat = cfg.compose_stage == ComposeStage::per_splat;
    const int tile = cfg.tile_size;
    const int bases = scene.sh_bases();
    std::vector<TileAccum> tiles(ctx.tile_splats.size());

    parallel_for(ctx.tile_splats.size(), cfg.resolved_threads(), [&](std::size_t t) {
        const std::vector<int>& candidates = ctx.tile_splats[t];
        TileAccum& acc = tiles[t];
        acc.prim.resize(candidates.size());
        for (auto& pg : acc.prim) pg.d_sh_coeffs = ShCoeffs::Zero(3, bases);

        auto slot = [&](int idx) {
            return static_cast<std::size_t>(
                std::lower_bound(candidates.begin(), candidates.end(), idx) -
                candidates.begin());
        };

        const int tx = static_cast<int>(t) % ctx.tiles_x;
        const int ty = static_cast<int>(t) / ctx.tiles_x;
        const int x0 = tx * tile, x1 = std::min(view.image_width, x0 + tile);
        const int y0 = ty * tile, y1 = std::min(view.image_height, y0 + tile);

        std::vector<raster::Hit> hits;
        std::vector<HitRecord> recs;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const auto [hx, hy] = pixel_ray_planes(x + 0.5, y + 0.5, ctx.intr);
                raster::gather_hits(ctx, ctx.tile_entries[t], x + 0.5, y + 0.5, hx, hy, hits);
                if (hits.empty()) continue;
                const double nx = hx[2], ny = hy[2];

                // Forward replay, recording per-hit intermediates.
                recs.clear();
                double transmittance = 1.0;
                double alpha_sum = 0.0, depth_num = 0.0;
                Vec3 cbar = Vec3::Zero();
                for (const raster::Hit& h : hits) {
                    HitRecord rec;
                    rec.idx = h.idx;
                    rec.u = h.u;
                    rec.v = h.v;
                    rec.z = h.z;
                    rec.g = h.g;
                    rec.a = h.a;
                    rec.transmittance = transmittance;
                    const SplatPrimitive& prim = scene.primitives[h.idx];
                    const Vec3 xw = splat_point(prim, h.u, h.v);
                    const Vec3 wvec = xw - ctx.camera_center;
                    rec.dir_norm = wvec.norm();
                    rec.dir = wvec / rec.dir_norm;
                    rec.base = raster::eval_sh_unchecked(rec.dir, prim.sh_coeffs, scene.sh_degree,
                                                         &rec.preclamp);
                    const double w = h.a * transmittance;
                    if (per_splat) {
                        rec.r0 = compose(rec.base, h.z, ctx.compose_ctx)[0];
                    } else {
                        rec.r0 = 0.0;
                        cbar += rec.base * w;
                    }
                    depth_num += h.z * w;
                    alpha_sum += w;
                    recs.push_back(rec);
                    transmittance *= (1.0 - h.a);
                    if (cfg.early_terminate && transmittance < cfg.termination_threshold) break;
                }

                const double d_pixel = grad_image.at(x, y);

                if (per_splat) {
                    double suffix = 0.0;
                    for (std::size_t i = recs.size(); i-- > 0;) {
                        const HitRecord& rec = recs[i];
                        const double w = rec.a * rec.transmittance;
                        const Vec3 g_r(d_pixel * w, 0.0, 0.0);
                        const double g_alpha =
                            d_pixel * (rec.transmittance * rec.r0 - suffix / (1.0 - rec.a));
                        suffix += rec.r0 * w;

                        Vec3 g_c = Vec3::Zero();
                        double g_z = 0.0;
                        compose_backward(ctx, rec.base, rec.z, g_r, g_c, g_z, acc);
                        hit_backward(ctx, rec, nx, ny, g_c, g_z, g_alpha,
                                     acc.prim[slot(rec.idx)], acc);
                    }
                } else {
                    const double denom = std::max(alpha_sum, raster::kDepthEps);
                    const double zbar = depth_num / denom;
                    const Vec3 g_r(d_pixel, 0.0, 0.0);
                    Vec3 g_cbar = Vec3::Zero();
                    double g_zbar = 0.0;
                    compose_backward(ctx, cbar, zbar, g_r, g_cbar, g_zbar, acc);
                    const double g_depth_num = g_zbar / denom;
                    const double g_alpha_sum =
                        alpha_sum > raster::kDepthEps ? -g_zbar * depth_num / (denom * denom)
                                                      : 0.0;

                    double suffix = 0.0;
                    for (std::size_t i = recs.size(); i-- > 0;) {
                        const HitRecord& rec = recs[i];
                        const double w = rec.a * rec.transmittance;
                        const double value =
                            g_cbar.dot(rec.base) + g_depth_num * rec.z + g_alpha_sum;
                        const double g_alpha =
                            rec.transmittance * value - suffix / (1.0 - rec.a);
                        suffix += value * w;

                        const Vec3 g_c = w * g_cbar;
                        const double g_z = w * g_depth_num;
                        hit_backward(ctx, rec, nx, ny, g_c, g_z, g_alpha,
                                     acc.prim[slot(rec.idx)], acc);
                    }
                }
            }
        }
    });

    // Ordered merge: deterministic for any worker count.
    GradientSet grads = GradientSet::zero_like(scene);
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        const TileAccum& acc = tiles[t];
        const std::vector<int>& candidates = ctx.tile_splats[t];
        for (std::size_t k = 0; k < candidates.size(); ++k)
            grads.primitives[candidates[k]].add(acc.prim[k]);
        grads.d_beta_raw += acc.beta_raw;
        grads.d_gamma += acc.gamma;
        grads.d_raw_w_att += acc.raw_w_att;
        grads.d_raw_w_refl += acc.raw_w_refl;
        grads.d_raw_w_scat += acc.raw_w_scat;
        grads.d_theta_x += acc.theta_x;
        grads.d_theta_y += acc.theta_y;
    }

    if (scene.ablation_flags & kDisableDar) {
        grads.d_theta_x = 0.0;
        grads.d_theta_y = 0.0;
    }
    return {report, grads};
}

// ---------------------------------------------------------------------------
// Finite-difference verification oracle.
// ---------------------------------------------------------------------------

enum class ParamGroup { centers, tangents, scales, opacity, sh, beta, gamma, weights, theta };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::centers: return "centers";
        case ParamGroup::tangents: return "tangents";
        case ParamGroup::scales: return "scales";
        case ParamGroup::opacity: return "opacity";
        case ParamGroup::sh: return "sh";
        case ParamGroup::beta: return "beta";
        case ParamGroup::gamma: return "gamma";
        case ParamGroup::weights: return "weights";
        case ParamGroup::theta: return "theta";
    }
    return "?";
}

inline ParamGroup param_group_from_name(const std::string& name) {
    for (ParamGroup g : {ParamGroup::centers, ParamGroup::tangents, ParamGroup::scales,
                         ParamGroup::opacity, ParamGroup::sh, ParamGroup::beta, ParamGroup::gamma,
                         ParamGroup::weights, ParamGroup::theta}) {
        if (name == param_group_name(g)) return g;
    }
    throw ConfigError("unknown parameter group: " + name);
}

inline std::vector<ParamGroup> all_param_groups() {
    return {ParamGroup::centers, ParamGroup::tangents, ParamGroup::scales, ParamGroup::opacity,
            ParamGroup::sh,      ParamGroup::beta,     ParamGroup::gamma,  ParamGroup::weights,
            ParamGroup::theta};
}

namespace autodiff_detail {

inline const std::pair<int, int> kGammaOffDiag[6] = {{0, 1}, {0, 2}, {1, 0},
                                                     {1, 2}, {2, 0}, {2, 1}};

inline std::size_t param_count(const SceneModel& scene, ParamGroup group) {
    const std::size_t n = scene.primitives.size();
    switch (group) {
        case ParamGroup::centers: return 3 * n;
        case ParamGroup::tangents: return 6 * n;
        case ParamGroup::scales: return 2 * n;
        case ParamGroup::opacity: return n;
        case ParamGroup::sh: return 3 * static_cast<std::size_t>(scene.sh_bases()) * n;
        case ParamGroup::beta: return 1;
        case ParamGroup::gamma: return 6;
        case ParamGroup::weights: return 3;
        case ParamGroup::theta: return 2;
    }
    return 0;
}

inline double* param_ptr(SceneModel& scene, ParamGroup group, std::size_t i) {
    switch (group) {
        case ParamGroup::centers:
            return &scene.primitives[i / 3].center[static_cast<int>(i % 3)];
        case ParamGroup::tangents: {
            auto& p = scene.primitives[i / 6];
            const std::size_t r = i % 6;
            return r < 3 ? &p.tangent_u[static_cast<int>(r)] : &p.tangent_v[static_cast<int>(r - 3)];
        }
        case ParamGroup::scales: {
            auto& p = scene.primitives[i / 2];
            return (i % 2 == 0) ? &p.log_scale_u : &p.log_scale_v;
        }
        case ParamGroup::opacity: return &scene.primitives[i].opacity_logit;
        case ParamGroup::sh: {
            const std::size_t per = 3 * static_cast<std::size_t>(scene.sh_bases());
            auto& p = scene.primitives[i / per];
            const std::size_t r = i % per;
            return &p.sh_coeffs(static_cast<int>(r / scene.sh_bases()),
                                static_cast<int>(r % scene.sh_bases()));
        }
        case ParamGroup::beta: return &scene.acoustics.beta_raw;
        case ParamGroup::gamma: {
            const auto [r, c] = kGammaOffDiag[i];
            return &scene.acoustics.gamma(r, c);
        }
        case ParamGroup::weights:
            return i == 0 ? &scene.acoustics.raw_w_att
                          : (i == 1 ? &scene.acoustics.raw_w_refl : &scene.acoustics.raw_w_scat);
        case ParamGroup::theta: return i == 0 ? &scene.dar.theta_x : &scene.dar.theta_y;
    }
    return nullptr;
}

inline double analytic_entry(const GradientSet& g, const SceneModel& scene, ParamGroup group,
                             std::size_t i) {
    switch (group) {
        case ParamGroup::centers: return g.primitives[i / 3].d_center[static_cast<int>(i % 3)];
        case ParamGroup::tangents: {
            const auto& p = g.primitives[i / 6];
            const std::size_t r = i % 6;
            return r < 3 ? p.d_tangent_u[static_cast<int>(r)] : p.d_tangent_v[static_cast<int>(r - 3)];
        }
        case ParamGroup::scales: {
            const auto& p = g.primitives[i / 2];
            return (i % 2 == 0) ? p.d_log_scale_u : p.d_log_scale_v;
        }
        case ParamGroup::opacity: return g.primitives[i].d_opacity_logit;
        case ParamGroup::sh: {
            const std::size_t per = 3 * static_cast<std::size_t>(scene.sh_bases());
            const auto& p = g.primitives[i / per];
            const std::size_t r = i % per;
            return p.d_sh_coeffs(static_cast<int>(r / scene.sh_bases()),
                                 static_cast<int>(r % scene.sh_bases()));
        }
        case ParamGroup::beta: return g.d_beta_raw;
        case ParamGroup::gamma: {
            const auto [r, c] = kGammaOffDiag[i];
            return g.d_gamma(r, c);
        }
        case ParamGroup::weights:
            return i == 0 ? g.d_raw_w_att : (i == 1 ? g.d_raw_w_refl : g.d_raw_w_scat);
        case ParamGroup::theta: return i == 0 ? g.d_theta_x : g.d_theta_y;
    }
    return 0.0;
}

}  // namespace autodiff_detail

struct FiniteDiffEntry {
    std::size_t index;
    double analytic;
    double numeric;
    double rel_error;
};

// Central-difference check of backward() over one parameter group.
// rel_error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(const SceneModel& scene, const CameraView& view,
                                const TileConfig& cfg, const Image& target, ParamGroup group,
                                double h, double lambda_dssim = 0.2,
                                std::vector<FiniteDiffEntry>* detail = nullptr) {
    using namespace autodiff_detail;
    if (!(h > 0.0)) throw PreconditionError("finite_diff_check step must be positive");

    const auto [report, grads] = backward(scene, view, cfg, target, lambda_dssim);
    (void)report;

    auto loss_of = [&](const SceneModel& s) {
        const RenderOutput out = render(s, view, cfg);
        return loss(out.intensity, target, lambda_dssim).total;
    };

    double max_rel = 0.0;
    SceneModel probe = scene;
    const std::size_t count = param_count(probe, group);
    for (std::size_t i = 0; i < count; ++i) {
        double* p = param_ptr(probe, group, i);
        const double saved = *p;
        *p = saved + h;
        const double f_plus = loss_of(probe);
        *p = saved - h;
        const double f_minus = loss_of(probe);
        *p = saved;

        const double numeric = (f_plus - f_minus) / (2.0 * h);
        const double analytic = analytic_entry(grads, scene, group, i);
        const double rel =
            std::abs(analytic - numeric) /
            std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
        if (detail) detail->push_back({i, analytic, numeric, rel});
    }
    return max_rel;
}

}  // namespace echosplat
