// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "echosplat/preprocess.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace echosplat;

namespace {

Image random_image(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Image img(w, h);
    for (double& v : img.px) v = uni(rng);
    return img;
}

double image_sum(const Image& img) {
    return std::accumulate(img.px.begin(), img.px.end(), 0.0);
}

// Independent global histogram equalization oracle: 256 bins, out = cdf/N.
Image global_he_oracle(const Image& img) {
    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    for (double v : img.px) {
        int b = static_cast<int>(clamp01(v) * kBins);
        if (b > kBins - 1) b = kBins - 1;
        hist[b] += 1.0;
    }
    std::array<double, kBins> cdf{};
    double cum = 0.0;
    for (int b = 0; b < kBins; ++b) {
        cum += hist[b];
        cdf[b] = cum / static_cast<double>(img.px.size());
    }
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        int b = static_cast<int>(clamp01(img.px[i]) * kBins);
        if (b > kBins - 1) b = kBins - 1;
        out.px[i] = cdf[b];
    }
    return out;
}

}  // namespace

TEST(Diffusion, ConstantImageIsFixedPoint) {
    Image img(32, 24, 0.37);
    const Image out = anisotropic_diffusion(img, 10, 0.1, 0.2);
    for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_EQ(out.px[i], img.px[i]);
}

TEST(Diffusion, ImpulseSpreadsAndConserves) {
    Image img(31, 31, 0.1);
    img.at(15, 15) = 1.0;
    const double sum_before = image_sum(img);
    const Image out = anisotropic_diffusion(img, 10, 0.5, 0.2);
    EXPECT_LT(out.at(15, 15), 1.0);
    EXPECT_GT(out.at(15, 15), 0.1);
    EXPECT_NEAR(image_sum(out), sum_before, 1e-9);
}

TEST(Diffusion, MaxPrinciple) {
    std::mt19937_64 rng(307);
    for (int trial = 0; trial < 20; ++trial) {
        const Image img = random_image(rng, 24, 18);
        const auto [in_lo, in_hi] = std::minmax_element(img.px.begin(), img.px.end());
        const Image out = anisotropic_diffusion(img, 5, 0.2, 0.25);
        const auto [out_lo, out_hi] = std::minmax_element(out.px.begin(), out.px.end());
        EXPECT_GE(*out_lo, *in_lo - 1e-12);
        EXPECT_LE(*out_hi, *in_hi + 1e-12);
    }
}

TEST(Diffusion, EdgePreservingNoiseSuppression) {
    // Noisy step edge; kappa far below the step height preserves the edge
    // while flat-region noise is smoothed.
    const int w = 64, h = 64;
    Image clean(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) clean.at(x, y) = x < w / 2 ? 0.2 : 0.8;

    std::mt19937_64 rng(311);
    std::normal_distribution<double> noise(0.0, 0.04);
    Image noisy = clean;
    for (double& v : noisy.px) v = clamp01(v + noise(rng));

    const Image out = anisotropic_diffusion(noisy, 15, 0.1, 0.2);

    // Edge profile: mean jump across the step stays within 1% of the step.
    double jump = 0.0;
    for (int y = 0; y < h; ++y) jump += out.at(w / 2, y) - out.at(w / 2 - 1, y);
    jump /= h;
    EXPECT_NEAR(jump, 0.6, 0.01 * 0.6);

    // Flat-region residual variance drops by more than half.
    auto residual_var = [&](const Image& img) {
        double acc = 0.0, acc2 = 0.0;
        int n = 0;
        for (int y = 4; y < h - 4; ++y) {
            for (int x = 4; x < w / 2 - 8; ++x) {
                const double r = img.at(x, y) - clean.at(x, y);
                acc += r;
                acc2 += r * r;
                ++n;
            }
        }
        const double mean = acc / n;
        return acc2 / n - mean * mean;
    };
    EXPECT_LT(residual_var(out), 0.5 * residual_var(noisy));
}

TEST(Diffusion, RejectsUnstableParameters) {
    Image img(16, 16, 0.5);
    EXPECT_THROW(anisotropic_diffusion(img, 5, 0.1, 0.3), PreconditionError);
    EXPECT_THROW(anisotropic_diffusion(img, 5, 0.1, 0.0), PreconditionError);
    EXPECT_THROW(anisotropic_diffusion(img, 5, 0.0, 0.2), PreconditionError);
}

TEST(Clahe, ConstantImageStaysSpatiallyConstant) {
    Image img(40, 32, 0.42);
    const Image out = clahe(img, 4, 4, 2.0);
    // identical tile mappings; interpolation leaves only rounding wiggle
    for (double v : out.px) EXPECT_NEAR(v, out.px[0], 1e-12);
}

TEST(Clahe, GlobalLimitMatchesGlobalHistogramEqualization) {
    std::mt19937_64 rng(313);
    for (int trial = 0; trial < 3; ++trial) {
        const Image img = random_image(rng, 48, 36);
        const Image got = clahe(img, 1, 1, std::numeric_limits<double>::infinity());
        const Image want = global_he_oracle(img);
        for (std::size_t i = 0; i < img.px.size(); ++i)
            EXPECT_NEAR(got.px[i], want.px[i], 1.0 / 255.0);
    }
}

TEST(Clahe, TransferIsMonotone) {
    std::mt19937_64 rng(317);
    const Image img = random_image(rng, 40, 40);
    const Image out = clahe(img, 1, 1, 3.0);
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        for (std::size_t j = 0; j < img.px.size(); j += 97) {
            if (img.px[i] <= img.px[j])
                EXPECT_LE(out.px[i], out.px[j] + 1e-12);
        }
    }
}

TEST(Clahe, OutputStaysInUnitRange) {
    std::mt19937_64 rng(331);
    const Image img = random_image(rng, 33, 29);
    const Image out = clahe(img, 8, 8, 2.0);
    for (double v : out.px) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Clahe, RejectsTinyImages) {
    Image img(4, 4, 0.5);
    EXPECT_THROW(clahe(img, 8, 8, 2.0), ConfigError);
}
