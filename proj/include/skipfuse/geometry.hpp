#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "skipfuse/types.hpp"

namespace skipfuse::geometry {

/// Dense per-pixel depth in meters (camera-space z), row-major H x W.
struct DepthMap {
    static constexpr double kNoSurface = -1.0;

    int width = 0;
    int height = 0;
    std::vector<double> values;

    DepthMap() = default;
    DepthMap(int w, int h, double fill = kNoSurface) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Calibrated pinhole camera. Extrinsics map world to camera coordinates
/// (x right, y down, z forward).
struct CameraView {
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();
    int width = 1;
    int height = 1;
    int patch_size = 1;
    std::optional<DepthMap> depth;
    double timestamp = 0.0;
    std::string name;

    int patch_cols() const { return width / patch_size; }
    int patch_rows() const { return height / patch_size; }
};

/// Throws ConfigError when the camera violates its calibration invariants.
/// `require_patch_multiple` enforces W and H being multiples of the patch size.
void validate(const CameraView& view, bool require_patch_multiple = true);

struct PixelProjection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    int patch_u = 0;
    int patch_v = 0;
    int view_index = 0;
};

/// Camera-space depths at or below this are treated as not visible.
inline constexpr double kMinDepth = 1e-12;

/// Projects a world point. Returns nothing when the point lies behind the
/// camera or outside the image rectangle. Throws InputError on non-finite input.
std::optional<PixelProjection> project_point(const Vec3& point, const CameraView& view, int view_index = 0);

/// (floor(u / P), floor(v / P)), robust to the division rounding up to an integer.
std::pair<int, int> patch_index(double u, double v, int patch_size);

/// True when the projected depth agrees with the depth map at the pixel
/// containing (u, v) within `margin`. Throws ConfigError without a depth map.
bool occlusion_filter(const PixelProjection& projection, const CameraView& view, double margin);

/// True when near <= depth <= far.
bool range_filter(const PixelProjection& projection, double near, double far);

/// The three visibility tests in the order they are applied.
struct VisibilityFilter {
    bool occlusion = true;
    double margin = 0.05;
    bool range = true;
    double near = 1.0;
    double far = 4.0;

    static VisibilityFilter indoor() { return {}; }
    static VisibilityFilter outdoor() { return {false, 0.05, false, 1.0, 4.0}; }
    static VisibilityFilter frustum_only() { return {false, 0.05, false, 1.0, 4.0}; }
};

std::optional<PixelProjection> project_visible(const Vec3& point, const CameraView& view, int view_index,
                                               const VisibilityFilter& filter);

/// World position of the camera center.
Vec3 camera_center(const CameraView& view);

/// World-space direction of the ray through pixel coordinates (u, v), scaled
/// so that its camera-space z component is 1.
Vec3 pixel_ray(const CameraView& view, double u, double v);

/// Inverse of project_point: the world point at camera depth `depth` on the
/// ray through (u, v).
Vec3 unproject_pixel(const CameraView& view, double u, double v, double depth);

/// Pinhole camera at `eye` looking at `target`. Principal point at the image
/// center, square pixels with focal length `focal` (pixels).
CameraView look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, int patch_size,
                   double focal, double timestamp = 0.0);

/// Sensor-style depth: the nearest projected depth of `points` per pixel,
/// kNoSurface where no point lands.
DepthMap rasterize_points(std::span<const Vec3> points, const CameraView& view);

}  // namespace skipfuse::geometry
