// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace echosplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Camera-space hits closer than this are treated as invalid.
inline constexpr double kNearPlane = 1e-4;

// Scale-invariant singularity threshold for the 2x2 intersection solve.
inline constexpr double kSingularRelTol = 1e-12;

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PreconditionError : std::invalid_argument {
    explicit PreconditionError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct IoError : std::runtime_error {
    enum class Kind { open_failed, bad_magic, bad_version, truncated, non_finite, bad_content };

    IoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
    Kind kind;
};

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x), overflow-safe. softplus(0) = ln 2.
inline double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

// d/dx softplus(x) = sigmoid(x)
inline double softplus_grad(double x) { return sigmoid(x); }

// Inverse of softplus on (0, inf): returns x with softplus(x) = y.
inline double inv_softplus(double y) {
    if (y > 30.0) return y;
    return y + std::log1p(-std::exp(-y));
}

inline double inv_sigmoid(double y) { return std::log(y / (1.0 - y)); }

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace detail

}  // namespace echosplat
