// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "echosplat/sh.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace echosplat;

TEST(ShEval, DcOnlyIsDirectionIndependent) {
    ShCoeffs coeffs = ShCoeffs::Zero(3, 4);
    coeffs(0, 0) = 0.7 / sh::kC0;
    std::mt19937_64 rng(7);
    for (int i = 0; i < 50; ++i) {
        const Vec3 d = testutil::random_unit(rng);
        const Vec3 c = eval_sh(d, coeffs, 1);
        EXPECT_NEAR(c[0], 1.2, 1e-12);
        EXPECT_NEAR(c[1], 0.5, 1e-15);
        EXPECT_NEAR(c[2], 0.5, 1e-15);
    }
}

TEST(ShEval, DegreeZeroOffsetOnly) {
    ShCoeffs coeffs = ShCoeffs::Zero(3, 1);
    std::mt19937_64 rng(11);
    double max_dev = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec3 c = eval_sh(testutil::random_unit(rng), coeffs, 0);
        for (int ch = 0; ch < 3; ++ch) max_dev = std::max(max_dev, std::abs(c[ch] - 0.5));
    }
    EXPECT_EQ(max_dev, 0.0);
}

// With a single Y_1^1 coefficient the response reflects about the offset:
// c(d) + c(-d) = 1 whenever both pre-clamp values are non-negative.
TEST(ShEval, OppositeDirectionsReflectAboutOffset) {
    const double kappa = 0.3;  // |kappa * C1| < 0.5 keeps both sides unclamped
    ShCoeffs coeffs = ShCoeffs::Zero(3, 4);
    coeffs(0, 3) = kappa;
    std::mt19937_64 rng(13);
    for (int i = 0; i < 200; ++i) {
        const Vec3 d = testutil::random_unit(rng);
        Vec3 pre_pos, pre_neg;
        const Vec3 c_pos = eval_sh(d, coeffs, 1, &pre_pos);
        const Vec3 c_neg = eval_sh(-d, coeffs, 1, &pre_neg);
        ASSERT_GE(pre_pos[0], 0.0);
        ASSERT_GE(pre_neg[0], 0.0);
        EXPECT_NEAR(c_pos[0] + c_neg[0], 1.0, 1e-12);
    }
}

TEST(ShEval, ClampsNegativeResponses) {
    ShCoeffs coeffs = ShCoeffs::Zero(3, 4);
    coeffs(1, 0) = -10.0;
    Vec3 pre;
    const Vec3 c = eval_sh(Vec3(0, 0, 1), coeffs, 1, &pre);
    EXPECT_EQ(c[1], 0.0);
    EXPECT_LT(pre[1], 0.0);
}

TEST(ShEval, RejectsBadInputs) {
    ShCoeffs coeffs = ShCoeffs::Zero(3, 4);
    EXPECT_THROW(eval_sh(Vec3(0, 0, 1), coeffs, 4), ConfigError);
    EXPECT_THROW(eval_sh(Vec3(0, 0, 1), coeffs, -1), ConfigError);
    EXPECT_THROW(eval_sh(Vec3(0, 0, 1), coeffs, 2), ConfigError);  // width mismatch
    EXPECT_THROW(eval_sh(Vec3(0, 0, 2), coeffs, 1), PreconditionError);
}

TEST(ShEval, DegreeThreeUsesSixteenBases) {
    ShCoeffs coeffs = ShCoeffs::Zero(3, 16);
    coeffs(0, 15) = -1.0;  // x (x^2 - y^2) term; kC3[6] is negative
    const Vec3 d = Vec3(1, 0, 0);
    const Vec3 c = eval_sh(d, coeffs, 3);
    EXPECT_NEAR(c[0], 0.5 - sh::kC3[6], 1e-15);
}

// Central-difference check of the analytic basis gradients, all degrees.
TEST(ShBasis, GradientMatchesFiniteDifference) {
    std::mt19937_64 rng(17);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 d = testutil::random_unit(rng);
        double vals[sh::kMaxBases];
        Vec3 grads[sh::kMaxBases];
        sh::basis_grad(d, 3, vals, grads);
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 dp = d, dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            double vp[sh::kMaxBases], vm[sh::kMaxBases];
            sh::basis(dp, 3, vp);
            sh::basis(dm, 3, vm);
            for (int b = 0; b < 16; ++b) {
                const double fd = (vp[b] - vm[b]) / (2.0 * h);
                EXPECT_NEAR(grads[b][axis], fd, 1e-6) << "basis " << b << " axis " << axis;
            }
        }
    }
}
