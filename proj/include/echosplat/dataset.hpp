// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "echosplat/geometry.hpp"
#include "echosplat/image.hpp"
#include "echosplat/scene.hpp"

namespace echosplat {

struct FrameRecord {
    Image image;  // grayscale in [0,1]
    CameraView view;
    std::string file;
};

// Frames plus the every-eighth-frame test split and the initial FoV hints
// used to seed the DAR parameters.
struct Dataset {
    std::vector<FrameRecord> frames;
    std::vector<int> train_indices;
    std::vector<int> test_indices;
    int width = 0;
    int height = 0;
    double fov_x_init = 0.0;  // radians
    double fov_y_init = 0.0;

    DarParams initial_dar() const {
        DarParams dar;
        dar.theta_x = theta_from_fov(fov_x_init);
        dar.theta_y = theta_from_fov(fov_y_init);
        dar.clamp_to_bounds();
        return dar;
    }
};

// Test split: every eighth frame by index (index % 8 == 0).
inline void apply_split(Dataset& ds) {
    ds.train_indices.clear();
    ds.test_indices.clear();
    for (int i = 0; i < static_cast<int>(ds.frames.size()); ++i) {
        if (i % 8 == 0)
            ds.test_indices.push_back(i);
        else
            ds.train_indices.push_back(i);
    }
    // A dataset too small for the split rule still needs a training view.
    if (ds.train_indices.empty()) ds.train_indices = ds.test_indices;
}

inline CameraView view_from_c2w(const Mat4& c2w, int width, int height, int frame_id) {
    CameraView view;
    const Mat3 r = c2w.topLeftCorner<3, 3>();
    const Vec3 t = c2w.topRightCorner<3, 1>();
    view.world_to_camera.setIdentity();
    view.world_to_camera.topLeftCorner<3, 3>() = r.transpose();
    view.world_to_camera.topRightCorner<3, 1>() = -r.transpose() * t;
    view.image_width = width;
    view.image_height = height;
    view.frame_id = frame_id;
    return view;
}

inline Mat4 c2w_from_view(const CameraView& view) {
    Mat4 c2w = Mat4::Identity();
    const Mat3 r = view.rotation();
    c2w.topLeftCorner<3, 3>() = r.transpose();
    c2w.topRightCorner<3, 1>() = -r.transpose() * view.translation();
    return c2w;
}

// Loads `manifest.json` plus the referenced frames. When a frame has a
// lossless `.ugsi` sibling it is preferred over the 8-bit PNG.
inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    const fs::path manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError(IoError::Kind::open_failed, "missing manifest: " + manifest_path.string());

    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::bad_content, "manifest parse error: " + std::string(e.what()));
    }

    Dataset ds;
    try {
        ds.width = manifest.at("width").get<int>();
        ds.height = manifest.at("height").get<int>();
        ds.fov_x_init = deg2rad(manifest.at("fov_x_init_deg").get<double>());
        ds.fov_y_init = deg2rad(manifest.at("fov_y_init_deg").get<double>());

        int frame_id = 0;
        for (const auto& entry : manifest.at("frames")) {
            FrameRecord rec;
            rec.file = entry.at("file").get<std::string>();
            const auto c2w_values = entry.at("c2w").get<std::vector<double>>();
            if (c2w_values.size() != 16)
                throw IoError(IoError::Kind::bad_content, "c2w must hold 16 row-major values");
            Mat4 c2w;
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) c2w(r, c) = c2w_values[r * 4 + c];

            rec.view = view_from_c2w(c2w, ds.width, ds.height, frame_id);
            if (!rec.view.is_rigid(1e-6))
                throw IoError(IoError::Kind::bad_content,
                              "non-rigid pose for frame " + rec.file);

            const fs::path png_path = root / rec.file;
            fs::path ugsi_path = png_path;
            ugsi_path.replace_extension(".ugsi");
            rec.image = fs::exists(ugsi_path) ? read_ugsi(ugsi_path.string())
                                              : read_png_gray8(png_path.string());
            if (rec.image.width != ds.width || rec.image.height != ds.height)
                throw IoError(IoError::Kind::bad_content,
                              "frame dimension mismatch in " + rec.file);
            ds.frames.push_back(std::move(rec));
            ++frame_id;
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::bad_content, "manifest field error: " + std::string(e.what()));
    }

    apply_split(ds);
    return ds;
}

// Writes the manifest, 8-bit previews and lossless float frames.
inline void save_dataset(const std::string& dir, const std::vector<Image>& images,
                         const std::vector<Mat4>& c2w, int width, int height, double fov_x_hint_deg,
                         double fov_y_hint_deg) {
    namespace fs = std::filesystem;
    if (images.size() != c2w.size())
        throw PreconditionError("save_dataset: image/pose count mismatch");
    const fs::path root(dir);
    fs::create_directories(root / "frames");

    nlohmann::json manifest;
    manifest["width"] = width;
    manifest["height"] = height;
    manifest["fov_x_init_deg"] = fov_x_hint_deg;
    manifest["fov_y_init_deg"] = fov_y_hint_deg;
    manifest["frames"] = nlohmann::json::array();

    char name[32];
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::snprintf(name, sizeof(name), "frames/%04zu.png", i);
        write_png_gray8((root / name).string(), images[i]);
        fs::path ugsi = root / name;
        ugsi.replace_extension(".ugsi");
        write_ugsi(ugsi.string(), images[i]);

        nlohmann::json entry;
        entry["file"] = name;
        std::vector<double> values(16);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) values[r * 4 + c] = c2w[i](r, c);
        entry["c2w"] = values;
        manifest["frames"].push_back(entry);
    }

    std::ofstream out(root / "manifest.json");
    out << manifest.dump(2) << "\n";
}

}  // namespace echosplat
