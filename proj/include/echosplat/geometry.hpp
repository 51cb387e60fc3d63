// Copyright Contributors to the EchoSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <utility>

#include "echosplat/common.hpp"
#include "echosplat/scene.hpp"

namespace echosplat {

// Virtual pinhole pose: world_to_camera maps world points into a frame with
// +z forward, +x right, +y down. Intrinsics are derived separately from the
// scene's DAR parameters.
struct CameraView {
    Mat4 world_to_camera = Mat4::Identity();
    int image_width = 0;
    int image_height = 0;
    int frame_id = -1;

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 camera_center_world() const { return -rotation().transpose() * translation(); }

    Vec3 world_to_cam_point(const Vec3& p) const { return rotation() * p + translation(); }

    // Rigidity check: orthonormal rotation block with determinant +1.
    bool is_rigid(double tol = 1e-6) const {
        const Mat3 r = rotation();
        const Mat3 err = r * r.transpose() - Mat3::Identity();
        if (err.cwiseAbs().maxCoeff() > tol) return false;
        if (std::abs(r.determinant() - 1.0) > tol) return false;
        for (int i = 0; i < 4; ++i) {
            const double want = (i == 3) ? 1.0 : 0.0;
            if (std::abs(world_to_camera(3, i) - want) > tol) return false;
        }
        return true;
    }
};

struct Intrinsics {
    double fov_x = 0.0;
    double fov_y = 0.0;
    double f_x = 0.0;
    double f_y = 0.0;
    double c_x = 0.0;
    double c_y = 0.0;
};

// FOV = 2 atan(e^theta); strictly increasing, range (0, pi).
inline double rectified_fov(double theta) { return 2.0 * std::atan(std::exp(theta)); }

// Inverse: theta = ln tan(fov / 2).
inline double theta_from_fov(double fov) { return std::log(std::tan(0.5 * fov)); }

// Focal lengths follow f = dim / (2 tan(FOV/2)); principal point is the
// exact image center.
inline Intrinsics intrinsics_from_dar(const DarParams& dar, int width, int height) {
    Intrinsics intr;
    intr.fov_x = rectified_fov(dar.theta_x);
    intr.fov_y = rectified_fov(dar.theta_y);
    intr.f_x = width / (2.0 * std::tan(intr.fov_x / 2.0));
    intr.f_y = height / (2.0 * std::tan(intr.fov_y / 2.0));
    intr.c_x = width / 2.0;
    intr.c_y = height / 2.0;
    return intr;
}

// Homogeneous plane pair whose intersection is the viewing ray of pixel
// (x, y). Pixel coordinates are first normalized to the camera plane; the
// returned planes are (-1, 0, nx, 0) and (0, -1, ny, 0) in camera space, so
// any camera-space ray point P satisfies h . (P, 1) = 0 for both planes.
inline std::pair<Vec4, Vec4> pixel_ray_planes(double x, double y, const Intrinsics& intr) {
    const double nx = (x - intr.c_x) / intr.f_x;
    const double ny = (y - intr.c_y) / intr.f_y;
    return {Vec4(-1.0, 0.0, nx, 0.0), Vec4(0.0, -1.0, ny, 0.0)};
}

struct RaySplatHit {
    double u = 0.0;
    double v = 0.0;
    double depth_z = 0.0;
    bool valid = false;
};

// Per-render camera-frame snapshot of one primitive: tangent frame and
// center rotated/translated into camera coordinates.
struct PreparedSplat {
    Vec3 q_u = Vec3::Zero();  // R t_u
    Vec3 q_v = Vec3::Zero();  // R t_v
    Vec3 q_c = Vec3::Zero();  // R p_k + t
};

inline PreparedSplat prepare_splat(const SplatPrimitive& prim, const CameraView& view) {
    const Mat3 r = view.rotation();
    PreparedSplat prep;
    prep.q_u = r * prim.tangent_u;
    prep.q_v = r * prim.tangent_v;
    prep.q_c = r * prim.center + view.translation();
    return prep;
}

// Solves the two transformed plane equations restricted to the disk plane
// (local third coordinate 0):
//   (h . A e_u) u + (h . A e_v) v + (h . A e_p) = 0  for both planes,
// where A is the local-to-camera transform. Degenerate systems and hits at
// or behind the near plane are reported as invalid, not errors.
inline RaySplatHit intersect_prepared(const PreparedSplat& prep, const Vec4& h_x, const Vec4& h_y) {
    const Vec3 hx = h_x.head<3>();
    const Vec3 hy = h_y.head<3>();

    const double a1 = hx.dot(prep.q_u);
    const double b1 = hx.dot(prep.q_v);
    const double d1 = hx.dot(prep.q_c) + h_x[3];
    const double a2 = hy.dot(prep.q_u);
    const double b2 = hy.dot(prep.q_v);
    const double d2 = hy.dot(prep.q_c) + h_y[3];

    RaySplatHit hit;
    const double det = a1 * b2 - a2 * b1;
    const double scale = std::hypot(a1, b1) * std::hypot(a2, b2);
    if (std::abs(det) < kSingularRelTol * scale || scale == 0.0) return hit;

    hit.u = (b1 * d2 - b2 * d1) / det;
    hit.v = (a2 * d1 - a1 * d2) / det;
    hit.depth_z = prep.q_c.z() + hit.u * prep.q_u.z() + hit.v * prep.q_v.z();
    hit.valid = hit.depth_z > kNearPlane;
    return hit;
}

inline RaySplatHit intersect(const SplatPrimitive& prim, const CameraView& view, const Vec4& h_x,
                             const Vec4& h_y) {
    return intersect_prepared(prepare_splat(prim, view), h_x, h_y);
}

// World point on the disk from tangent-plane coordinates.
inline Vec3 splat_point(const SplatPrimitive& prim, double u, double v) {
    return prim.center + u * prim.tangent_u + v * prim.tangent_v;
}

// Projects a world point to pixel coordinates; returns false when the point
// is at or behind the near plane.
inline bool project_point(const Vec3& world, const CameraView& view, const Intrinsics& intr,
                          double* px, double* py) {
    const Vec3 cam = view.world_to_cam_point(world);
    if (cam.z() <= kNearPlane) return false;
    *px = intr.f_x * cam.x() / cam.z() + intr.c_x;
    *py = intr.f_y * cam.y() / cam.z() + intr.c_y;
    return true;
}

}  // namespace echosplat
