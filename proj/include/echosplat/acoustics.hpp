// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

#include "echosplat/common.hpp"
#include "echosplat/scene.hpp"

namespace echosplat {

// The per-response acoustic composition: base SH response plus weighted
// attenuation, specular reflection and volumetric scattering terms.

struct AcousticTerms {
    Vec3 i_att = Vec3::Zero();
    Vec3 i_refl = Vec3::Zero();
    Vec3 i_scat = Vec3::Zero();
    Vec3 i_final = Vec3::Zero();
};

// Log-domain depth attenuation: [-alpha z, 0, 0].
inline Vec3 attenuation(double z, double alpha) {
    if (z < 0.0) throw PreconditionError("attenuation depth must be non-negative");
    return Vec3(-alpha * z, 0.0, 0.0);
}

// Specular reflection: beta * c (.) c.
inline Vec3 reflection(const Vec3& c, double beta) { return beta * c.cwiseProduct(c); }

// Volumetric scattering: (Gamma c) (.) c, Gamma has a structurally zero
// diagonal (no same-channel coupling).
inline Vec3 scattering(const Vec3& c, const Mat3& gamma) {
    if (gamma(0, 0) != 0.0 || gamma(1, 1) != 0.0 || gamma(2, 2) != 0.0)
        throw PreconditionError("scattering matrix diagonal must be exactly zero");
    return (gamma * c).cwiseProduct(c);
}

// Softplus-activated parameters resolved once per render.
struct ComposeContext {
    double w_att = 0.0;
    double w_refl = 0.0;
    double w_scat = 0.0;
    double beta = 0.0;
    Mat3 gamma = Mat3::Zero();
    double alpha = AcousticParams::kAlpha;
    std::uint32_t flags = kAblateNone;
};

inline ComposeContext make_compose_context(const AcousticParams& params, std::uint32_t flags) {
    ComposeContext ctx;
    ctx.w_att = params.w_att();
    ctx.w_refl = params.w_refl();
    ctx.w_scat = params.w_scat();
    ctx.beta = params.beta();
    ctx.gamma = params.gamma;
    ctx.flags = flags;
    return ctx;
}

// I_final = c + w_att I_att + w_refl I_refl + w_scat I_scat, with ablation
// flags zeroing individual terms and kDisablePd short-circuiting to the
// pure SH response.
inline Vec3 compose(const Vec3& c, double z, const ComposeContext& ctx,
                    AcousticTerms* terms = nullptr) {
    if (ctx.flags & kDisablePd) {
        if (terms) *terms = AcousticTerms{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), c};
        return c;
    }
    Vec3 out = c;
    AcousticTerms t;
    if (!(ctx.flags & kDisableAtt)) {
        t.i_att = Vec3(-ctx.alpha * z, 0.0, 0.0);
        out += ctx.w_att * t.i_att;
    }
    if (!(ctx.flags & kDisableReflScat)) {
        t.i_refl = ctx.beta * c.cwiseProduct(c);
        t.i_scat = (ctx.gamma * c).cwiseProduct(c);
        out += ctx.w_refl * t.i_refl + ctx.w_scat * t.i_scat;
    }
    t.i_final = out;
    if (terms) *terms = t;
    return out;
}

inline Vec3 compose(const Vec3& c, double z, const AcousticParams& params, std::uint32_t flags,
                    AcousticTerms* terms = nullptr) {
    if (z < 0.0) throw PreconditionError("compose depth must be non-negative");
    return compose(c, z, make_compose_context(params, flags), terms);
}

}  // namespace echosplat
