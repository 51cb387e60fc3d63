// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "echosplat/common.hpp"
#include "echosplat/sh.hpp"

namespace echosplat {

// One 2D Gaussian disk: a planar elliptical primitive spanned by an
// orthonormal tangent frame, with log-scale extents, sigmoid opacity and
// per-channel SH coefficients for the view-dependent base response.
struct SplatPrimitive {
    Vec3 center = Vec3::Zero();
    Vec3 tangent_u = Vec3::UnitX();
    Vec3 tangent_v = Vec3::UnitY();
    double log_scale_u = 0.0;
    double log_scale_v = 0.0;
    double opacity_logit = 0.0;
    ShCoeffs sh_coeffs;  // 3 x B

    double scale_u() const { return std::exp(log_scale_u); }
    double scale_v() const { return std::exp(log_scale_v); }

    // Clamped into the open interval so extreme logits cannot saturate to
    // an exactly transparent or exactly opaque primitive.
    double opacity() const { return std::clamp(sigmoid(opacity_logit), 1e-300, 1.0 - 1e-15); }
    Vec3 normal() const { return tangent_u.cross(tangent_v); }

    // Gram-Schmidt on (tangent_u, tangent_v).
    void orthonormalize_frame() {
        tangent_u.normalize();
        tangent_v -= tangent_v.dot(tangent_u) * tangent_u;
        tangent_v.normalize();
    }
};

inline SplatPrimitive make_splat(const Vec3& center, const Vec3& tangent_u, const Vec3& tangent_v,
                                 double log_scale_u, double log_scale_v, double opacity_logit,
                                 int sh_degree) {
    SplatPrimitive p;
    p.center = center;
    p.tangent_u = tangent_u;
    p.tangent_v = tangent_v;
    p.orthonormalize_frame();
    p.log_scale_u = log_scale_u;
    p.log_scale_v = log_scale_v;
    p.opacity_logit = opacity_logit;
    p.sh_coeffs = ShCoeffs::Zero(3, sh::basis_count(sh_degree));
    return p;
}

// Tangent-frame covariance diag(exp(2 ls_u), exp(2 ls_v)). SPD by construction.
inline Mat2 covariance_2d(const SplatPrimitive& prim) {
    Mat2 cov = Mat2::Zero();
    cov(0, 0) = std::exp(2.0 * prim.log_scale_u);
    cov(1, 1) = std::exp(2.0 * prim.log_scale_v);
    return cov;
}

// G(u,v) = exp(-1/2 [u,v] cov^-1 [u,v]^T) for SPD cov.
inline double gaussian_weight(double u, double v, const Mat2& cov) {
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    const double q = (cov(1, 1) * u * u - (cov(0, 1) + cov(1, 0)) * u * v + cov(0, 0) * v * v) / det;
    return std::exp(-0.5 * q);
}

// Global acoustic parameters of the composition operator. All learnable
// weights live in raw (pre-Softplus) form; alpha is a fixed normalization.
struct AcousticParams {
    double beta_raw = inv_softplus(0.1);
    Mat3 gamma = Mat3::Zero();  // structurally zero diagonal
    double raw_w_att = inv_softplus(0.1);
    double raw_w_refl = inv_softplus(0.1);
    double raw_w_scat = inv_softplus(0.1);

    static constexpr double kAlpha = 1.0;

    double beta() const { return softplus(beta_raw); }
    double w_att() const { return softplus(raw_w_att); }
    double w_refl() const { return softplus(raw_w_refl); }
    double w_scat() const { return softplus(raw_w_scat); }

    void zero_gamma_diagonal() {
        gamma(0, 0) = 0.0;
        gamma(1, 1) = 0.0;
        gamma(2, 2) = 0.0;
    }
};

// Learnable log-tangent half-FoV parameters with clamp bounds.
// FOV = 2 atan(exp(theta)).
struct DarParams {
    double theta_x = 0.0;
    double theta_y = 0.0;
    double theta_min = std::log(std::tan(deg2rad(5.0)));   // FOV floor 10 deg
    double theta_max = std::log(std::tan(deg2rad(85.0)));  // FOV ceiling 170 deg

    void clamp_to_bounds() {
        theta_x = std::clamp(theta_x, theta_min, theta_max);
        theta_y = std::clamp(theta_y, theta_min, theta_max);
    }
};

enum AblationFlags : std::uint32_t {
    kAblateNone = 0,
    kDisableAtt = 1u << 0,
    kDisableReflScat = 1u << 1,
    kDisableDar = 1u << 2,
    kDisablePd = 1u << 3,
};

struct SceneModel {
    std::vector<SplatPrimitive> primitives;
    AcousticParams acoustics;
    DarParams dar;
    int sh_degree = 1;
    std::uint32_t ablation_flags = kAblateNone;

    std::size_t size() const { return primitives.size(); }
    int sh_bases() const { return sh::basis_count(sh_degree); }

    // Structural checks the renderer relies on. Tangent orthonormality is
    // deliberately not required here: it is an optimizer-maintained
    // invariant, and the finite-difference oracle must be able to render
    // scenes perturbed off that manifold.
    void validate_render() const {
        if (sh_degree < 0 || sh_degree > sh::kMaxDegree)
            throw ConfigError("sh_degree out of range");
        const int bases = sh_bases();
        for (std::size_t i = 0; i < primitives.size(); ++i) {
            if (primitives[i].sh_coeffs.cols() != bases)
                throw ConfigError("primitive " + std::to_string(i) +
                                  ": sh coefficient width does not match sh_degree");
        }
        if (acoustics.gamma(0, 0) != 0.0 || acoustics.gamma(1, 1) != 0.0 ||
            acoustics.gamma(2, 2) != 0.0)
            throw PreconditionError("gamma diagonal must be exactly zero");
    }

    // Throws on any violated structural invariant.
    void validate() const {
        if (sh_degree < 0 || sh_degree > sh::kMaxDegree)
            throw ConfigError("sh_degree out of range");
        const int bases = sh_bases();
        for (std::size_t i = 0; i < primitives.size(); ++i) {
            const auto& p = primitives[i];
            const std::string tag = "primitive " + std::to_string(i);
            if (std::abs(p.tangent_u.norm() - 1.0) > 1e-9 ||
                std::abs(p.tangent_v.norm() - 1.0) > 1e-9)
                throw PreconditionError(tag + ": tangent vectors must be unit length");
            if (std::abs(p.tangent_u.dot(p.tangent_v)) > 1e-9)
                throw PreconditionError(tag + ": tangent frame must be orthogonal");
            if (!std::isfinite(p.scale_u()) || !std::isfinite(p.scale_v()))
                throw PreconditionError(tag + ": scales must be finite");
            if (p.sh_coeffs.cols() != bases)
                throw ConfigError(tag + ": sh coefficient width does not match sh_degree");
            if (!p.center.allFinite() || !p.sh_coeffs.allFinite() ||
                !std::isfinite(p.opacity_logit))
                throw PreconditionError(tag + ": non-finite field");
        }
        if (acoustics.gamma(0, 0) != 0.0 || acoustics.gamma(1, 1) != 0.0 ||
            acoustics.gamma(2, 2) != 0.0)
            throw PreconditionError("gamma diagonal must be exactly zero");
        if (dar.theta_x < dar.theta_min - 1e-12 || dar.theta_x > dar.theta_max + 1e-12 ||
            dar.theta_y < dar.theta_min - 1e-12 || dar.theta_y > dar.theta_max + 1e-12)
            throw PreconditionError("dar theta out of bounds");
    }
};

// ---------------------------------------------------------------------------
// Checkpoint format "UGSC": all scalars 64-bit IEEE-754 little endian.
//   magic[4] | version u32 | scalar width flag u32 (=64) | sh_degree u32 |
//   count u64 | count records | acoustic block | DAR block
// Record: center 3, tangent_u 3, tangent_v 3, log_scales 2, opacity_logit 1,
//         sh 3*B (channel-major). Acoustics: beta_raw, gamma row-major 9
//         (diagonal written as 0), raw weights att/refl/scat. DAR: theta_x,
//         theta_y, theta_min, theta_max.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_f64(std::FILE* f, double v) { std::fwrite(&v, 8, 1, f); }
inline void put_u32(std::FILE* f, std::uint32_t v) { std::fwrite(&v, 4, 1, f); }
inline void put_u64(std::FILE* f, std::uint64_t v) { std::fwrite(&v, 8, 1, f); }

inline double get_f64(std::FILE* f) {
    double v;
    if (std::fread(&v, 8, 1, f) != 1) throw IoError(IoError::Kind::truncated, "truncated checkpoint");
    if (!std::isfinite(v)) throw IoError(IoError::Kind::non_finite, "non-finite checkpoint field");
    return v;
}

inline std::uint32_t get_u32(std::FILE* f) {
    std::uint32_t v;
    if (std::fread(&v, 4, 1, f) != 1) throw IoError(IoError::Kind::truncated, "truncated checkpoint");
    return v;
}

inline std::uint64_t get_u64(std::FILE* f) {
    std::uint64_t v;
    if (std::fread(&v, 8, 1, f) != 1) throw IoError(IoError::Kind::truncated, "truncated checkpoint");
    return v;
}

}  // namespace detail

inline std::size_t checkpoint_file_size(std::size_t n_primitives, int sh_degree) {
    const std::size_t header = 4 + 4 + 4 + 4 + 8;
    const std::size_t record = (3 + 3 + 3 + 2 + 1 + 3 * static_cast<std::size_t>(sh::basis_count(sh_degree))) * 8;
    const std::size_t acoustic = (1 + 9 + 3) * 8;
    const std::size_t dar = 4 * 8;
    return header + n_primitives * record + acoustic + dar;
}

inline void save_checkpoint(const SceneModel& scene, const std::string& path) {
    scene.validate();
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError(IoError::Kind::open_failed, "cannot open for write: " + path);
    std::FILE* f = fp.get();

    std::fwrite("UGSC", 1, 4, f);
    detail::put_u32(f, kCheckpointVersion);
    detail::put_u32(f, 64);
    detail::put_u32(f, static_cast<std::uint32_t>(scene.sh_degree));
    detail::put_u64(f, scene.primitives.size());

    const int bases = scene.sh_bases();
    for (const auto& p : scene.primitives) {
        for (int i = 0; i < 3; ++i) detail::put_f64(f, p.center[i]);
        for (int i = 0; i < 3; ++i) detail::put_f64(f, p.tangent_u[i]);
        for (int i = 0; i < 3; ++i) detail::put_f64(f, p.tangent_v[i]);
        detail::put_f64(f, p.log_scale_u);
        detail::put_f64(f, p.log_scale_v);
        detail::put_f64(f, p.opacity_logit);
        for (int ch = 0; ch < 3; ++ch)
            for (int b = 0; b < bases; ++b) detail::put_f64(f, p.sh_coeffs(ch, b));
    }

    detail::put_f64(f, scene.acoustics.beta_raw);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) detail::put_f64(f, r == c ? 0.0 : scene.acoustics.gamma(r, c));
    detail::put_f64(f, scene.acoustics.raw_w_att);
    detail::put_f64(f, scene.acoustics.raw_w_refl);
    detail::put_f64(f, scene.acoustics.raw_w_scat);

    detail::put_f64(f, scene.dar.theta_x);
    detail::put_f64(f, scene.dar.theta_y);
    detail::put_f64(f, scene.dar.theta_min);
    detail::put_f64(f, scene.dar.theta_max);
}

inline SceneModel load_checkpoint(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError(IoError::Kind::open_failed, "cannot open: " + path);
    std::FILE* f = fp.get();

    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4) throw IoError(IoError::Kind::truncated, "truncated checkpoint");
    if (std::memcmp(magic, "UGSC", 4) != 0)
        throw IoError(IoError::Kind::bad_magic, "bad checkpoint magic in " + path);
    const std::uint32_t version = detail::get_u32(f);
    if (version != kCheckpointVersion)
        throw IoError(IoError::Kind::bad_version,
                      "unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t width = detail::get_u32(f);
    if (width != 64)
        throw IoError(IoError::Kind::bad_version, "unsupported scalar width " + std::to_string(width));

    SceneModel scene;
    scene.sh_degree = static_cast<int>(detail::get_u32(f));
    if (scene.sh_degree < 0 || scene.sh_degree > sh::kMaxDegree)
        throw IoError(IoError::Kind::bad_content, "checkpoint sh_degree out of range");
    const std::uint64_t count = detail::get_u64(f);
    const int bases = scene.sh_bases();

    scene.primitives.resize(count);
    for (auto& p : scene.primitives) {
        for (int i = 0; i < 3; ++i) p.center[i] = detail::get_f64(f);
        for (int i = 0; i < 3; ++i) p.tangent_u[i] = detail::get_f64(f);
        for (int i = 0; i < 3; ++i) p.tangent_v[i] = detail::get_f64(f);
        p.log_scale_u = detail::get_f64(f);
        p.log_scale_v = detail::get_f64(f);
        p.opacity_logit = detail::get_f64(f);
        p.sh_coeffs.resize(3, bases);
        for (int ch = 0; ch < 3; ++ch)
            for (int b = 0; b < bases; ++b) p.sh_coeffs(ch, b) = detail::get_f64(f);
    }

    scene.acoustics.beta_raw = detail::get_f64(f);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) scene.acoustics.gamma(r, c) = detail::get_f64(f);
    scene.acoustics.zero_gamma_diagonal();
    scene.acoustics.raw_w_att = detail::get_f64(f);
    scene.acoustics.raw_w_refl = detail::get_f64(f);
    scene.acoustics.raw_w_scat = detail::get_f64(f);

    scene.dar.theta_x = detail::get_f64(f);
    scene.dar.theta_y = detail::get_f64(f);
    scene.dar.theta_min = detail::get_f64(f);
    scene.dar.theta_max = detail::get_f64(f);
    return scene;
}

}  // namespace echosplat
