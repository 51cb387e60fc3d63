// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <random>

#include "echosplat/dataset.hpp"
#include "echosplat/rasterizer.hpp"

namespace echosplat {

// Desk-scale synthetic data source: layered bright interfaces (large thin
// disks) plus diffuse speckle disks, rendered along a linear sweep
// trajectory with small random tilts.
struct PhantomSpec {
    std::uint64_t rng_seed = 42;
    int n_layers = 3;
    int n_speckle_splats = 150;
    Vec3 extent_min = Vec3(-0.35, -0.35, 0.55);
    Vec3 extent_max = Vec3(0.35, 0.35, 1.15);
    int n_views = 16;
    int image_width = 96;
    int image_height = 96;
    double fov_deg = 70.0;               // ground-truth FOV, both axes
    double fov_hint_offset_x_deg = 0.0;  // manifest hint = fov_deg + offset
    double fov_hint_offset_y_deg = 0.0;
    double sweep_span = 0.24;
    double sweep_z_amplitude = 0.0;    // depth modulation along the sweep
    double tilt_deg = 2.0;
    double noise_sigma = 0.0;          // multiplicative speckle on images only
    double gt_w_att = 0.12;
    double gt_w_refl = 0.10;
    double gt_w_scat = 0.06;
    double gt_beta = 0.30;
    double gt_gamma_scale = 0.25;   // off-diagonal scattering magnitude
    double layer_l1_scale = 0.06;   // directional texture of the interfaces

    void validate() const {
        if (n_views < 2) throw ConfigError("phantom needs at least 2 views");
        if ((extent_max - extent_min).minCoeff() <= 0.0)
            throw ConfigError("phantom extent is degenerate");
        if (image_width < 8 || image_height < 8) throw ConfigError("phantom images too small");
    }
};

inline void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = nlohmann::json{{"rng_seed", s.rng_seed},
                       {"n_layers", s.n_layers},
                       {"n_speckle_splats", s.n_speckle_splats},
                       {"extent_min", {s.extent_min[0], s.extent_min[1], s.extent_min[2]}},
                       {"extent_max", {s.extent_max[0], s.extent_max[1], s.extent_max[2]}},
                       {"n_views", s.n_views},
                       {"image_width", s.image_width},
                       {"image_height", s.image_height},
                       {"fov_deg", s.fov_deg},
                       {"fov_hint_offset_x_deg", s.fov_hint_offset_x_deg},
                       {"fov_hint_offset_y_deg", s.fov_hint_offset_y_deg},
                       {"sweep_span", s.sweep_span},
                       {"sweep_z_amplitude", s.sweep_z_amplitude},
                       {"tilt_deg", s.tilt_deg},
                       {"noise_sigma", s.noise_sigma},
                       {"gt_w_att", s.gt_w_att},
                       {"gt_w_refl", s.gt_w_refl},
                       {"gt_w_scat", s.gt_w_scat},
                       {"gt_beta", s.gt_beta},
                       {"gt_gamma_scale", s.gt_gamma_scale},
                       {"layer_l1_scale", s.layer_l1_scale}};
}

inline void from_json(const nlohmann::json& j, PhantomSpec& s) {
    PhantomSpec defaults;
    s = defaults;
    s.rng_seed = j.value("rng_seed", defaults.rng_seed);
    s.n_layers = j.value("n_layers", defaults.n_layers);
    s.n_speckle_splats = j.value("n_speckle_splats", defaults.n_speckle_splats);
    if (j.contains("extent_min")) {
        const auto v = j.at("extent_min").get<std::vector<double>>();
        s.extent_min = Vec3(v.at(0), v.at(1), v.at(2));
    }
    if (j.contains("extent_max")) {
        const auto v = j.at("extent_max").get<std::vector<double>>();
        s.extent_max = Vec3(v.at(0), v.at(1), v.at(2));
    }
    s.n_views = j.value("n_views", defaults.n_views);
    s.image_width = j.value("image_width", defaults.image_width);
    s.image_height = j.value("image_height", defaults.image_height);
    s.fov_deg = j.value("fov_deg", defaults.fov_deg);
    s.fov_hint_offset_x_deg = j.value("fov_hint_offset_x_deg", defaults.fov_hint_offset_x_deg);
    s.fov_hint_offset_y_deg = j.value("fov_hint_offset_y_deg", defaults.fov_hint_offset_y_deg);
    s.sweep_span = j.value("sweep_span", defaults.sweep_span);
    s.sweep_z_amplitude = j.value("sweep_z_amplitude", defaults.sweep_z_amplitude);
    s.tilt_deg = j.value("tilt_deg", defaults.tilt_deg);
    s.noise_sigma = j.value("noise_sigma", defaults.noise_sigma);
    s.gt_w_att = j.value("gt_w_att", defaults.gt_w_att);
    s.gt_w_refl = j.value("gt_w_refl", defaults.gt_w_refl);
    s.gt_w_scat = j.value("gt_w_scat", defaults.gt_w_scat);
    s.gt_beta = j.value("gt_beta", defaults.gt_beta);
    s.gt_gamma_scale = j.value("gt_gamma_scale", defaults.gt_gamma_scale);
    s.layer_l1_scale = j.value("layer_l1_scale", defaults.layer_l1_scale);
}

namespace phantom_detail {

inline Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(n(rng), n(rng), n(rng));
    } while (v.norm() < 1e-6);
    return v.normalized();
}

// Camera at `pos` looking along `fwd` (+z forward, +x right, +y down).
inline CameraView camera_at(const Vec3& pos, const Vec3& fwd_in, int width, int height,
                            int frame_id) {
    const Vec3 fwd = fwd_in.normalized();
    Vec3 hint(0.0, 1.0, 0.0);
    if (std::abs(fwd.dot(hint)) > 0.99) hint = Vec3(1.0, 0.0, 0.0);
    const Vec3 right = fwd.cross(hint).normalized();
    const Vec3 down = fwd.cross(right).normalized();
    CameraView view;
    view.world_to_camera.setIdentity();
    view.world_to_camera.block<1, 3>(0, 0) = right.transpose();
    view.world_to_camera.block<1, 3>(1, 0) = down.transpose();
    view.world_to_camera.block<1, 3>(2, 0) = fwd.transpose();
    view.world_to_camera.topRightCorner<3, 1>() =
        -view.world_to_camera.topLeftCorner<3, 3>() * pos;
    view.image_width = width;
    view.image_height = height;
    view.frame_id = frame_id;
    return view;
}

}  // namespace phantom_detail

// Deterministically builds the ground-truth scene and renders the dataset
// with the reference renderer. With zero noise the dataset images are the
// exact clamped renders of the returned scene.
inline std::pair<SceneModel, Dataset> make_phantom(const PhantomSpec& spec) {
    using phantom_detail::random_unit;
    spec.validate();
    std::mt19937_64 rng(spec.rng_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    SceneModel scene;
    scene.sh_degree = 1;
    const Vec3 span = spec.extent_max - spec.extent_min;
    const Vec3 center = 0.5 * (spec.extent_min + spec.extent_max);

    // Bright tissue interfaces: large thin disks stacked in depth.
    for (int k = 0; k < spec.n_layers; ++k) {
        const double frac = spec.n_layers == 1 ? 0.5 : 0.15 + 0.7 * k / (spec.n_layers - 1.0);
        const double z = spec.extent_min.z() + frac * span.z();
        const double tilt = deg2rad(6.0) * uni(rng);
        const Mat3 rot = Eigen::AngleAxisd(tilt, random_unit(rng)).toRotationMatrix();
        SplatPrimitive p = make_splat(
            Vec3(center.x() + 0.1 * (uni(rng) - 0.5) * span.x(),
                 center.y() + 0.1 * (uni(rng) - 0.5) * span.y(), z),
            rot * Vec3::UnitX(), rot * Vec3::UnitY(), std::log(0.45 * span.x()),
            std::log(0.45 * span.y()), inv_sigmoid(0.75 + 0.15 * uni(rng)), 1);
        p.sh_coeffs(0, 0) = (0.25 + 0.25 * uni(rng)) / sh::kC0;  // bright channel 0
        p.sh_coeffs(1, 0) = (0.30 + 0.20 * uni(rng)) / sh::kC0 - 0.5 / sh::kC0;
        p.sh_coeffs(2, 0) = (0.30 + 0.20 * uni(rng)) / sh::kC0 - 0.5 / sh::kC0;
        for (int ch = 0; ch < 3; ++ch)
            for (int b = 1; b < 4; ++b) p.sh_coeffs(ch, b) = spec.layer_l1_scale * (uni(rng) - 0.5);
        scene.primitives.push_back(p);
    }

    // Diffuse speckle: small, dim, randomly oriented disks.
    for (int k = 0; k < spec.n_speckle_splats; ++k) {
        Vec3 pos;
        for (int i = 0; i < 3; ++i)
            pos[i] = spec.extent_min[i] + uni(rng) * span[i];
        const Vec3 tu = random_unit(rng);
        Vec3 tv = random_unit(rng);
        while (std::abs(tv.dot(tu)) > 0.9) tv = random_unit(rng);
        SplatPrimitive p = make_splat(pos, tu, tv,
                                      std::log(0.015 + 0.02 * uni(rng)),
                                      std::log(0.015 + 0.02 * uni(rng)),
                                      inv_sigmoid(0.1 + 0.25 * uni(rng)), 1);
        p.sh_coeffs(0, 0) = (uni(rng) * 0.4) / sh::kC0;
        p.sh_coeffs(1, 0) = (0.2 * uni(rng)) / sh::kC0 - 0.1 / sh::kC0;
        p.sh_coeffs(2, 0) = (0.2 * uni(rng)) / sh::kC0 - 0.1 / sh::kC0;
        for (int ch = 0; ch < 3; ++ch)
            for (int b = 1; b < 4; ++b) p.sh_coeffs(ch, b) = 0.1 * (uni(rng) - 0.5);
        scene.primitives.push_back(p);
    }

    scene.acoustics.beta_raw = inv_softplus(spec.gt_beta);
    scene.acoustics.raw_w_att = inv_softplus(spec.gt_w_att);
    scene.acoustics.raw_w_refl = inv_softplus(spec.gt_w_refl);
    scene.acoustics.raw_w_scat = inv_softplus(spec.gt_w_scat);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (r != c) scene.acoustics.gamma(r, c) = spec.gt_gamma_scale * (uni(rng) - 0.5);
    scene.dar.theta_x = theta_from_fov(deg2rad(spec.fov_deg));
    scene.dar.theta_y = theta_from_fov(deg2rad(spec.fov_deg));
    scene.validate();

    // Linear sweep with small random tilts, looking into the volume.
    Dataset ds;
    ds.width = spec.image_width;
    ds.height = spec.image_height;
    ds.fov_x_init = deg2rad(spec.fov_deg + spec.fov_hint_offset_x_deg);
    ds.fov_y_init = deg2rad(spec.fov_deg + spec.fov_hint_offset_y_deg);

    const double rayleigh_mean = std::sqrt(M_PI / 2.0);
    for (int v = 0; v < spec.n_views; ++v) {
        const double s = spec.n_views == 1 ? 0.5 : v / (spec.n_views - 1.0);
        const Vec3 pos(center.x() - spec.sweep_span / 2.0 + s * spec.sweep_span,
                       center.y() + 0.02 * (uni(rng) - 0.5),
                       spec.sweep_z_amplitude * std::sin(2.0 * M_PI * s));
        Vec3 fwd = (center - pos).normalized();
        const double tilt = deg2rad(spec.tilt_deg) * (uni(rng) - 0.5);
        fwd = Eigen::AngleAxisd(tilt, random_unit(rng)).toRotationMatrix() * fwd;

        FrameRecord rec;
        rec.view = phantom_detail::camera_at(pos, fwd, spec.image_width, spec.image_height, v);
        rec.file = "";

        const RenderOutput out = reference_render(scene, rec.view);
        rec.image = clamped(out.intensity);
        if (spec.noise_sigma > 0.0) {
            for (double& px : rec.image.px) {
                const double u = uni(rng);
                const double rayleigh = std::sqrt(-2.0 * std::log1p(-u));
                px = clamp01(px * (1.0 + spec.noise_sigma * (rayleigh - rayleigh_mean)));
            }
        }
        ds.frames.push_back(std::move(rec));
    }
    apply_split(ds);
    return {std::move(scene), std::move(ds)};
}

// Writes the dataset directory (manifest + frames) and the ground-truth
// checkpoint next to it.
inline void write_phantom(const PhantomSpec& spec, const std::string& out_dir) {
    auto [scene, ds] = make_phantom(spec);
    std::vector<Image> images;
    std::vector<Mat4> poses;
    for (const auto& f : ds.frames) {
        images.push_back(f.image);
        poses.push_back(c2w_from_view(f.view));
    }
    save_dataset(out_dir, images, poses, ds.width, ds.height, rad2deg(ds.fov_x_init),
                 rad2deg(ds.fov_y_init));
    save_checkpoint(scene, (std::filesystem::path(out_dir) / "ground_truth.ugsc").string());
}

}  // namespace echosplat
