// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "echosplat/autodiff.hpp"
#include "echosplat/scene.hpp"

namespace echosplat {

// Per-group learning rates. Positions and the FoV parameters carry the
// published defaults; the rest follow standard splatting practice and are
// config-exposed.
struct LrTable {
    double position = 1.6e-4;
    double tangent = 1.0e-3;
    double log_scale = 5.0e-3;
    double opacity = 5.0e-2;
    double sh = 2.5e-3;
    double acoustic = 1.0e-3;
    double dar = 1.0e-3;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moments, mirror-shaped to the gradients, plus the shared
// step counter.
struct AdamState {
    GradientSet m;
    GradientSet v;
    std::int64_t step = 0;

    static AdamState zero_like(const SceneModel& scene) {
        AdamState s;
        s.m = GradientSet::zero_like(scene);
        s.v = GradientSet::zero_like(scene);
        return s;
    }
};

namespace adam_detail {

struct Stepper {
    double beta1, beta2, eps;
    double bias1, bias2;

    double update(double grad, double& m, double& v, double lr) const {
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad * grad;
        const double m_hat = m / bias1;
        const double v_hat = v / bias2;
        return lr * m_hat / (std::sqrt(v_hat) + eps);
    }
};

// Projects the (g_u, g_v) pair onto the tangent space of the orthonormality
// constraint manifold {|t_u| = |t_v| = 1, t_u . t_v = 0}.
inline void project_tangent_grads(const SplatPrimitive& p, Vec3& g_u, Vec3& g_v) {
    const double coupling = 0.5 * (g_u.dot(p.tangent_v) + g_v.dot(p.tangent_u));
    const Vec3 pu = g_u - g_u.dot(p.tangent_u) * p.tangent_u - coupling * p.tangent_v;
    const Vec3 pv = g_v - g_v.dot(p.tangent_v) * p.tangent_v - coupling * p.tangent_u;
    g_u = pu;
    g_v = pv;
}

}  // namespace adam_detail

// One Adam step over every learnable field, followed by the constraint
// projections: tangent frames re-orthonormalized, theta clamped to bounds,
// gamma diagonal re-zeroed. Frozen parameter groups (kDisableDar) are
// skipped entirely.
inline void adam_step(SceneModel& scene, const GradientSet& grads, AdamState& state,
                      const LrTable& lrs, const AdamConfig& cfg = {}) {
    if (grads.primitives.size() != scene.primitives.size() ||
        state.m.primitives.size() != scene.primitives.size())
        throw PreconditionError("adam_step: gradient/state shape mismatch");

    state.step += 1;
    adam_detail::Stepper st{cfg.beta1, cfg.beta2, cfg.eps,
                            1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)),
                            1.0 - std::pow(cfg.beta2, static_cast<double>(state.step))};

    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        SplatPrimitive& p = scene.primitives[i];
        const PrimitiveGrads& g = grads.primitives[i];
        PrimitiveGrads& m = state.m.primitives[i];
        PrimitiveGrads& v = state.v.primitives[i];

        for (int k = 0; k < 3; ++k)
            p.center[k] -= st.update(g.d_center[k], m.d_center[k], v.d_center[k], lrs.position);

        Vec3 gu = g.d_tangent_u, gv = g.d_tangent_v;
        adam_detail::project_tangent_grads(p, gu, gv);
        for (int k = 0; k < 3; ++k) {
            p.tangent_u[k] -= st.update(gu[k], m.d_tangent_u[k], v.d_tangent_u[k], lrs.tangent);
            p.tangent_v[k] -= st.update(gv[k], m.d_tangent_v[k], v.d_tangent_v[k], lrs.tangent);
        }

        p.log_scale_u -=
            st.update(g.d_log_scale_u, m.d_log_scale_u, v.d_log_scale_u, lrs.log_scale);
        p.log_scale_v -=
            st.update(g.d_log_scale_v, m.d_log_scale_v, v.d_log_scale_v, lrs.log_scale);
        p.opacity_logit -=
            st.update(g.d_opacity_logit, m.d_opacity_logit, v.d_opacity_logit, lrs.opacity);
        for (int ch = 0; ch < 3; ++ch)
            for (int b = 0; b < p.sh_coeffs.cols(); ++b)
                p.sh_coeffs(ch, b) -= st.update(g.d_sh_coeffs(ch, b), m.d_sh_coeffs(ch, b),
                                                v.d_sh_coeffs(ch, b), lrs.sh);

        p.orthonormalize_frame();
    }

    AcousticParams& ac = scene.acoustics;
    ac.beta_raw -= st.update(grads.d_beta_raw, state.m.d_beta_raw, state.v.d_beta_raw,
                             lrs.acoustic);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (r != c)
                ac.gamma(r, c) -= st.update(grads.d_gamma(r, c), state.m.d_gamma(r, c),
                                            state.v.d_gamma(r, c), lrs.acoustic);
    ac.raw_w_att -=
        st.update(grads.d_raw_w_att, state.m.d_raw_w_att, state.v.d_raw_w_att, lrs.acoustic);
    ac.raw_w_refl -=
        st.update(grads.d_raw_w_refl, state.m.d_raw_w_refl, state.v.d_raw_w_refl, lrs.acoustic);
    ac.raw_w_scat -=
        st.update(grads.d_raw_w_scat, state.m.d_raw_w_scat, state.v.d_raw_w_scat, lrs.acoustic);
    ac.zero_gamma_diagonal();

    if (!(scene.ablation_flags & kDisableDar)) {
        scene.dar.theta_x -=
            st.update(grads.d_theta_x, state.m.d_theta_x, state.v.d_theta_x, lrs.dar);
        scene.dar.theta_y -=
            st.update(grads.d_theta_y, state.m.d_theta_y, state.v.d_theta_y, lrs.dar);
        scene.dar.clamp_to_bounds();
    }
}

}  // namespace echosplat
