// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>

#include "echosplat/common.hpp"

namespace echosplat {

// Real spherical harmonics basis in the splatting convention: evaluate the
// basis against a unit direction, add the 0.5 offset and clamp at zero.
namespace sh {

inline constexpr int kMaxDegree = 3;
inline constexpr int kMaxBases = 16;

inline constexpr double kC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
inline constexpr double kC1 = 0.4886025119029199;   // sqrt(3 / (4 pi))
inline constexpr std::array<double, 5> kC2 = {
    1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
    -1.0925484305920792, 0.5462742152960396};
inline constexpr std::array<double, 7> kC3 = {
    -0.5900435899266435, 2.890611442640554,  -0.4570457994644658, 0.3731763325901154,
    -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};

inline constexpr int basis_count(int degree) { return (degree + 1) * (degree + 1); }

// Fills out[0 .. basis_count(degree)) with the basis values at unit d.
inline void basis(const Vec3& d, int degree, double* out) {
    const double x = d.x(), y = d.y(), z = d.z();
    out[0] = kC0;
    if (degree < 1) return;
    out[1] = -kC1 * y;
    out[2] = kC1 * z;
    out[3] = -kC1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;
    out[4] = kC2[0] * xy;
    out[5] = kC2[1] * yz;
    out[6] = kC2[2] * (2.0 * zz - xx - yy);
    out[7] = kC2[3] * xz;
    out[8] = kC2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kC3[0] * y * (3.0 * xx - yy);
    out[10] = kC3[1] * xy * z;
    out[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kC3[5] * z * (xx - yy);
    out[15] = kC3[6] * x * (xx - yy);
}

// Basis values plus per-basis gradients with respect to the (unconstrained)
// direction components. grad[b] = d out[b] / d (x, y, z).
inline void basis_grad(const Vec3& d, int degree, double* out, Vec3* grad) {
    const double x = d.x(), y = d.y(), z = d.z();
    basis(d, degree, out);
    grad[0] = Vec3::Zero();
    if (degree < 1) return;
    grad[1] = Vec3(0.0, -kC1, 0.0);
    grad[2] = Vec3(0.0, 0.0, kC1);
    grad[3] = Vec3(-kC1, 0.0, 0.0);
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    grad[4] = kC2[0] * Vec3(y, x, 0.0);
    grad[5] = kC2[1] * Vec3(0.0, z, y);
    grad[6] = kC2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
    grad[7] = kC2[3] * Vec3(z, 0.0, x);
    grad[8] = kC2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
    if (degree < 3) return;
    grad[9] = kC3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    grad[10] = kC3[1] * Vec3(y * z, x * z, x * y);
    grad[11] = kC3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    grad[12] = kC3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    grad[13] = kC3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    grad[14] = kC3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
    grad[15] = kC3[6] * Vec3(3.0 * xx - yy, -2.0 * x * y, 0.0);
}

}  // namespace sh

// Coefficient layout: 3 channels x B bases, B = (degree+1)^2.
using ShCoeffs = Eigen::Matrix<double, 3, Eigen::Dynamic>;

// Base acoustic response: per channel max(0, 0.5 + sum_b k[ch][b] Y_b(d)).
// `preclamp`, when non-null, receives the values before clamping (the
// backward pass gates gradients on their sign).
inline Vec3 eval_sh(const Vec3& direction, const ShCoeffs& coeffs, int degree,
                    Vec3* preclamp = nullptr) {
    if (degree < 0 || degree > sh::kMaxDegree)
        throw ConfigError("sh degree must be in {0,1,2,3}, got " + std::to_string(degree));
    const int bases = sh::basis_count(degree);
    if (coeffs.cols() != bases)
        throw ConfigError("sh coefficient width " + std::to_string(coeffs.cols()) +
                          " does not match degree " + std::to_string(degree));
    if (std::abs(direction.norm() - 1.0) > 1e-6)
        throw PreconditionError("eval_sh direction must be unit length");

    double basis_vals[sh::kMaxBases];
    sh::basis(direction, degree, basis_vals);
    Vec3 raw;
    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.5;
        for (int b = 0; b < bases; ++b) acc += coeffs(ch, b) * basis_vals[b];
        raw[ch] = acc;
    }
    if (preclamp) *preclamp = raw;
    return raw.cwiseMax(0.0);
}

}  // namespace echosplat
