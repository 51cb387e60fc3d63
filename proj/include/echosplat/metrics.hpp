// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "echosplat/common.hpp"
#include "echosplat/image.hpp"

namespace echosplat {

inline double mse(const Image& a, const Image& b) {
    if (!a.same_dims(b)) throw PreconditionError("mse: image dimensions differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double d = a.px[i] - b.px[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.px.size());
}

// 10 log10(1 / mse) for unit dynamic range, capped at 99 dB.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m < 1e-10) return 99.0;
    return 10.0 * std::log10(1.0 / m);
}

namespace ssim_detail {

inline constexpr int kWindow = 11;
inline constexpr double kSigma = 1.5;
inline constexpr double kK1 = 0.01;
inline constexpr double kK2 = 0.03;
inline constexpr double kC1 = kK1 * kK1;  // dynamic range 1
inline constexpr double kC2 = kK2 * kK2;

inline const std::array<double, kWindow>& kernel() {
    static const std::array<double, kWindow> k = [] {
        std::array<double, kWindow> w{};
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double d = i - kWindow / 2;
            w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += w[i];
        }
        for (double& v : w) v /= sum;
        return w;
    }();
    return k;
}

// Separable same-size convolution with zero padding. The kernel is
// symmetric, so the operator is self-adjoint; the backward pass reuses it.
inline Image filter(const Image& img) {
    const auto& k = kernel();
    const int half = kWindow / 2;
    Image tmp(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -half; i <= half; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= img.width) continue;
                acc += k[i + half] * img.at(xx, y);
            }
            tmp.at(x, y) = acc;
        }
    }
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -half; i <= half; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= img.height) continue;
                acc += k[i + half] * tmp.at(x, yy);
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

// Filtered statistics used by both the metric and its backward pass.
struct Fields {
    Image mu_x, mu_y;    // filtered means
    Image s_xx, s_xy;    // filtered x^2 and x*y (not variance-centered)
    Image s_yy;
    Image map;           // per-pixel SSIM
    double mean = 0.0;
};

inline Fields compute(const Image& x, const Image& y) {
    if (!x.same_dims(y)) throw PreconditionError("ssim: image dimensions differ");
    Fields f;
    f.mu_x = filter(x);
    f.mu_y = filter(y);

    Image xx(x.width, x.height), yy(x.width, x.height), xy(x.width, x.height);
    for (std::size_t i = 0; i < x.px.size(); ++i) {
        xx.px[i] = x.px[i] * x.px[i];
        yy.px[i] = y.px[i] * y.px[i];
        xy.px[i] = x.px[i] * y.px[i];
    }
    f.s_xx = filter(xx);
    f.s_yy = filter(yy);
    f.s_xy = filter(xy);

    f.map = Image(x.width, x.height);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.px.size(); ++i) {
        const double mx = f.mu_x.px[i], my = f.mu_y.px[i];
        const double var_x = f.s_xx.px[i] - mx * mx;
        const double var_y = f.s_yy.px[i] - my * my;
        const double cov = f.s_xy.px[i] - mx * my;
        const double a1 = 2.0 * mx * my + kC1;
        const double a2 = 2.0 * cov + kC2;
        const double b1 = mx * mx + my * my + kC1;
        const double b2 = var_x + var_y + kC2;
        f.map.px[i] = (a1 * a2) / (b1 * b2);
        acc += f.map.px[i];
    }
    f.mean = acc / static_cast<double>(x.px.size());
    return f;
}

}  // namespace ssim_detail

// Mean local SSIM, 11x11 Gaussian window sigma = 1.5, K1 = 0.01, K2 = 0.03,
// dynamic range 1.
inline double ssim(const Image& a, const Image& b) { return ssim_detail::compute(a, b).mean; }

// Gradient of mean SSIM with respect to the first image.
inline Image ssim_backward(const Image& x, const Image& y, const ssim_detail::Fields& f) {
    using namespace ssim_detail;
    const std::size_t n = x.px.size();
    Image d_mu(x.width, x.height), d_sxx(x.width, x.height), d_sxy(x.width, x.height);
    for (std::size_t i = 0; i < n; ++i) {
        const double mx = f.mu_x.px[i], my = f.mu_y.px[i];
        const double cov = f.s_xy.px[i] - mx * my;
        const double var_x = f.s_xx.px[i] - mx * mx;
        const double var_y = f.s_yy.px[i] - my * my;
        const double a1 = 2.0 * mx * my + kC1;
        const double a2 = 2.0 * cov + kC2;
        const double b1 = mx * mx + my * my + kC1;
        const double b2 = var_x + var_y + kC2;
        const double s = f.map.px[i];
        const double inv_b1b2 = 1.0 / (b1 * b2);

        d_sxx.px[i] = -s / b2;
        d_sxy.px[i] = 2.0 * a1 * inv_b1b2;
        d_mu.px[i] = 2.0 * my * a2 * inv_b1b2 - 2.0 * mx * s / b1 + 2.0 * mx * s / b2 -
                     2.0 * my * a1 * inv_b1b2;
    }
    const Image f_mu = filter(d_mu);
    const Image f_sxx = filter(d_sxx);
    const Image f_sxy = filter(d_sxy);
    Image grad(x.width, x.height);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        grad.px[i] = inv_n * (f_mu.px[i] + 2.0 * x.px[i] * f_sxx.px[i] + y.px[i] * f_sxy.px[i]);
    return grad;
}

}  // namespace echosplat
