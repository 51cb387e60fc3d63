// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "echosplat/common.hpp"
#include "echosplat/image.hpp"

namespace echosplat {

// Perona-Malik diffusion with exponential conductance g(t) = exp(-(t/kappa)^2),
// 4-neighbor explicit scheme, zero-flux boundaries. The flux form conserves
// the image sum; lambda <= 0.25 keeps the update a convex combination, so
// output extrema never exceed input extrema.
inline Image anisotropic_diffusion(const Image& input, int iterations, double kappa,
                                   double lambda) {
    if (!(lambda > 0.0 && lambda <= 0.25))
        throw PreconditionError("diffusion lambda must be in (0, 0.25]");
    if (!(kappa > 0.0)) throw PreconditionError("diffusion kappa must be positive");

    const int w = input.width, h = input.height;
    Image cur = input;
    Image next(w, h);
    const double inv_k2 = 1.0 / (kappa * kappa);
    auto conducted = [&](double delta) { return std::exp(-delta * delta * inv_k2) * delta; };

    for (int it = 0; it < iterations; ++it) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double center = cur.at(x, y);
                double flux = 0.0;
                if (x > 0) flux += conducted(cur.at(x - 1, y) - center);
                if (x + 1 < w) flux += conducted(cur.at(x + 1, y) - center);
                if (y > 0) flux += conducted(cur.at(x, y - 1) - center);
                if (y + 1 < h) flux += conducted(cur.at(x, y + 1) - center);
                next.at(x, y) = center + lambda * flux;
            }
        }
        std::swap(cur, next);
    }
    return cur;
}

// Contrast-limited adaptive histogram equalization: 256-bin per-tile clipped
// histograms, uniform redistribution of the clipped excess, bilinear
// interpolation between the tile mappings.
inline Image clahe(const Image& input, int tiles_x, int tiles_y, double clip_limit) {
    if (tiles_x < 1 || tiles_y < 1) throw PreconditionError("clahe needs at least a 1x1 grid");
    if (!(clip_limit >= 1.0)) throw PreconditionError("clahe clip_limit must be >= 1");
    if (input.width < tiles_x || input.height < tiles_y)
        throw ConfigError("clahe: image smaller than the tile grid");

    constexpr int kBins = 256;
    const int w = input.width, h = input.height;
    auto bin_of = [&](double v) {
        int b = static_cast<int>(clamp01(v) * kBins);
        return b > kBins - 1 ? kBins - 1 : b;
    };

    // Tile t spans [edge(t), edge(t+1)).
    auto edge_x = [&](int t) { return (t * w) / tiles_x; };
    auto edge_y = [&](int t) { return (t * h) / tiles_y; };

    // Per-tile transfer functions (CDF of the clipped histogram, in [0,1]).
    std::vector<std::array<double, kBins>> lut(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (int ty = 0; ty < tiles_y; ++ty) {
        for (int tx = 0; tx < tiles_x; ++tx) {
            const int x0 = edge_x(tx), x1 = edge_x(tx + 1);
            const int y0 = edge_y(ty), y1 = edge_y(ty + 1);
            const double area = static_cast<double>(x1 - x0) * (y1 - y0);

            std::array<double, kBins> hist{};
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) hist[bin_of(input.at(x, y))] += 1.0;

            const double ceiling = clip_limit * area / kBins;
            if (std::isfinite(ceiling)) {
                double excess = 0.0;
                for (double& c : hist) {
                    if (c > ceiling) {
                        excess += c - ceiling;
                        c = ceiling;
                    }
                }
                const double share = excess / kBins;
                for (double& c : hist) c += share;
            }

            auto& l = lut[static_cast<std::size_t>(ty) * tiles_x + tx];
            double cum = 0.0;
            for (int b = 0; b < kBins; ++b) {
                cum += hist[b];
                l[b] = cum / area;
            }
        }
    }

    // Bilinear interpolation between the mappings of the four surrounding
    // tile centers, clamped at the borders.
    auto locate = [](double pos, int tiles, auto edge) {
        auto center = [&](int t) { return 0.5 * (edge(t) + edge(t + 1)); };
        int lo = 0;
        while (lo + 1 < tiles && center(lo + 1) <= pos) ++lo;
        double frac = 0.0;
        if (lo + 1 < tiles && pos > center(lo))
            frac = (pos - center(lo)) / (center(lo + 1) - center(lo));
        return std::pair<int, double>(lo, std::clamp(frac, 0.0, 1.0));
    };

    Image out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int b = bin_of(input.at(x, y));
            const auto [tx0, fx] = locate(x + 0.5, tiles_x, edge_x);
            const auto [ty0, fy] = locate(y + 0.5, tiles_y, edge_y);
            const int tx1 = std::min(tx0 + 1, tiles_x - 1);
            const int ty1 = std::min(ty0 + 1, tiles_y - 1);

            const double v00 = lut[static_cast<std::size_t>(ty0) * tiles_x + tx0][b];
            const double v10 = lut[static_cast<std::size_t>(ty0) * tiles_x + tx1][b];
            const double v01 = lut[static_cast<std::size_t>(ty1) * tiles_x + tx0][b];
            const double v11 = lut[static_cast<std::size_t>(ty1) * tiles_x + tx1][b];
            out.at(x, y) = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) +
                           fy * ((1.0 - fx) * v01 + fx * v11);
        }
    }
    return out;
}

}  // namespace echosplat
