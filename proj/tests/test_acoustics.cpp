// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "echosplat/acoustics.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace echosplat;

namespace {

// Independent scalar re-implementation of the composition, term by term.
Vec3 compose_oracle(const Vec3& c, double z, const AcousticParams& p, std::uint32_t flags) {
    auto sp = [](double x) { return std::log(1.0 + std::exp(x)); };
    if (flags & kDisablePd) return c;
    double out[3] = {c[0], c[1], c[2]};
    if (!(flags & kDisableAtt)) {
        const double att[3] = {-AcousticParams::kAlpha * z, 0.0, 0.0};
        for (int i = 0; i < 3; ++i) out[i] += sp(p.raw_w_att) * att[i];
    }
    if (!(flags & kDisableReflScat)) {
        for (int i = 0; i < 3; ++i) out[i] += sp(p.raw_w_refl) * sp(p.beta_raw) * c[i] * c[i];
        for (int i = 0; i < 3; ++i) {
            double gc = 0.0;
            for (int j = 0; j < 3; ++j) gc += p.gamma(i, j) * c[j];
            out[i] += sp(p.raw_w_scat) * gc * c[i];
        }
    }
    return Vec3(out[0], out[1], out[2]);
}

AcousticParams random_params(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    AcousticParams p;
    p.beta_raw = uni(rng);
    p.raw_w_att = uni(rng);
    p.raw_w_refl = uni(rng);
    p.raw_w_scat = uni(rng);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (r != c) p.gamma(r, c) = uni(rng);
    return p;
}

}  // namespace

TEST(Softplus, BasicIdentities) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-12);
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> uni(-700.0, 700.0);
    for (int i = 0; i < 1000; ++i) {
        const double x = uni(rng);
        EXPECT_GT(softplus(x), 0.0) << "x = " << x;
        EXPECT_TRUE(std::isfinite(softplus(x)));
    }
    // round trip with the inverse used for configuration
    for (double w : {1e-6, 0.01, 0.5, 1.0, 3.0, 40.0}) {
        EXPECT_NEAR(softplus(inv_softplus(w)), w, 1e-12 * std::max(1.0, w));
    }
}

TEST(Attenuation, KnownValuesAndLinearity) {
    EXPECT_TRUE(attenuation(0.0, 1.0).isZero(0.0));
    const Vec3 a = attenuation(2.0, 1.0);
    EXPECT_EQ(a[0], -2.0);
    EXPECT_EQ(a[1], 0.0);
    EXPECT_EQ(a[2], 0.0);

    std::mt19937_64 rng(67);
    std::uniform_real_distribution<double> uni(0.0, 10.0);
    for (int i = 0; i < 100; ++i) {
        const double x = uni(rng), y = uni(rng);
        EXPECT_NEAR(attenuation(x + y, 1.0)[0], attenuation(x, 1.0)[0] + attenuation(y, 1.0)[0],
                    1e-12);
    }
    EXPECT_THROW(attenuation(-0.1, 1.0), PreconditionError);
}

TEST(Reflection, KnownValuesAndEvenness) {
    EXPECT_TRUE(reflection(Vec3(0.3, -2.0, 5.0), 0.0).isZero(0.0));
    const Vec3 r = reflection(Vec3(0.4, 0.2, 0.1), 0.5);
    EXPECT_NEAR(r[0], 0.08, 1e-15);
    EXPECT_NEAR(r[1], 0.02, 1e-15);
    EXPECT_NEAR(r[2], 0.005, 1e-15);

    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> uni(-2.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const Vec3 c(uni(rng), uni(rng), uni(rng));
        EXPECT_TRUE(reflection(c, 0.7).isApprox(reflection(-c, 0.7), 1e-15));
        EXPECT_GE(reflection(c, 0.7).minCoeff(), 0.0);
    }
}

TEST(Scattering, KnownValuesAndStructure) {
    Mat3 gamma = Mat3::Zero();
    EXPECT_TRUE(scattering(Vec3(0.5, 0.5, 0.5), gamma).isZero(0.0));

    gamma(0, 1) = 1.0;
    const Vec3 s = scattering(Vec3(0.2, 0.3, 0.1), gamma);
    EXPECT_NEAR(s[0], 0.06, 1e-15);
    EXPECT_EQ(s[1], 0.0);
    EXPECT_EQ(s[2], 0.0);

    // zero diagonal kills same-channel coupling
    for (int ch = 0; ch < 3; ++ch) {
        Vec3 c = Vec3::Zero();
        c[ch] = 0.8;
        Mat3 g = Mat3::Zero();
        g(0, 1) = 0.3;
        g(1, 2) = -0.2;
        g(2, 0) = 0.5;
        const Vec3 res = scattering(c, g);
        // (Gamma c)_i c_i is zero except where both factors hit channel ch
        for (int i = 0; i < 3; ++i)
            if (i == ch) EXPECT_EQ(res[i], 0.0);
    }

    Mat3 bad = Mat3::Zero();
    bad(2, 2) = 1e-9;
    EXPECT_THROW(scattering(Vec3(1, 1, 1), bad), PreconditionError);
}

TEST(Compose, IdentityWhenEverythingDisabled) {
    AcousticParams p;
    const Vec3 c(0.9, 0.4, 0.2);
    const Vec3 out = compose(c, 3.0, p, kDisableAtt | kDisableReflScat);
    EXPECT_TRUE(out.isApprox(c, 0.0));
}

TEST(Compose, UnitAttenuationWeight) {
    AcousticParams p;
    p.raw_w_att = inv_softplus(1.0);
    const Vec3 out = compose(Vec3(0.9, 0.5, 0.5), 2.0, p, kDisableReflScat);
    EXPECT_NEAR(out[0], -1.1, 1e-12);
    EXPECT_NEAR(out[1], 0.5, 1e-15);
    EXPECT_NEAR(out[2], 0.5, 1e-15);
}

TEST(Compose, MatchesTermByTermOracle) {
    std::mt19937_64 rng(73);
    std::uniform_real_distribution<double> uc(-1.5, 1.5), uz(0.0, 5.0);
    const std::uint32_t flag_sets[] = {kAblateNone, kDisableAtt, kDisableReflScat,
                                       kDisableAtt | kDisableReflScat, kDisablePd};
    for (int i = 0; i < 500; ++i) {
        const AcousticParams p = random_params(rng);
        const Vec3 c(uc(rng), uc(rng), uc(rng));
        const double z = uz(rng);
        const std::uint32_t flags = flag_sets[i % 5];
        const Vec3 got = compose(c, z, p, flags);
        const Vec3 want = compose_oracle(c, z, p, flags);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
    }
}

TEST(Compose, ChannelZeroStrictlyDecreasesWithDepth) {
    std::mt19937_64 rng(79);
    const AcousticParams p = random_params(rng);
    const Vec3 c(0.8, 0.3, 0.4);
    double prev = compose(c, 0.0, p, kAblateNone)[0];
    for (int s = 1; s <= 50; ++s) {
        const double cur = compose(c, 0.1 * s, p, kAblateNone)[0];
        EXPECT_LT(cur, prev);
        prev = cur;
    }
}

TEST(Compose, DisablePdIsIdentity) {
    std::mt19937_64 rng(83);
    std::uniform_real_distribution<double> uc(-3.0, 3.0), uz(0.0, 9.0);
    for (int i = 0; i < 1000; ++i) {
        const AcousticParams p = random_params(rng);
        const Vec3 c(uc(rng), uc(rng), uc(rng));
        const Vec3 out = compose(c, uz(rng), p, kDisablePd);
        EXPECT_EQ(out[0], c[0]);
        EXPECT_EQ(out[1], c[1]);
        EXPECT_EQ(out[2], c[2]);
    }
}

TEST(Compose, TermsAreReported) {
    AcousticParams p;
    p.raw_w_att = inv_softplus(0.5);
    AcousticTerms terms;
    compose(Vec3(0.6, 0.1, 0.2), 1.5, p, kAblateNone, &terms);
    EXPECT_EQ(terms.i_att[0], -1.5);
    EXPECT_EQ(terms.i_att[1], 0.0);
    EXPECT_EQ(terms.i_att[2], 0.0);
    EXPECT_GE(terms.i_refl.minCoeff(), 0.0);
}
