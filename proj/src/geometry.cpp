#include "skipfuse/geometry.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Geometry>

#include "skipfuse/error.hpp"

namespace skipfuse::geometry {

namespace {

std::string label(const CameraView& view) {
    return view.name.empty() ? std::string("<unnamed view>") : "view '" + view.name + "'";
}

}  // namespace

void validate(const CameraView& view, bool require_patch_multiple) {
    auto fail = [&](const std::string& what) { throw ConfigError(label(view) + ": " + what); };
    if (!view.intrinsics.allFinite() || !view.extrinsics.allFinite()) fail("non-finite calibration");
    if (view.intrinsics(2, 2) != 1.0 || view.intrinsics(2, 0) != 0.0 || view.intrinsics(2, 1) != 0.0)
        fail("intrinsics bottom row must be (0, 0, 1)");
    if (view.extrinsics.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) fail("extrinsics bottom row must be (0, 0, 0, 1)");
    const Eigen::Matrix3d r = view.extrinsics.topLeftCorner<3, 3>();
    if (((r * r.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        fail("extrinsic rotation is not orthonormal");
    if (view.width <= 0 || view.height <= 0 || view.patch_size <= 0) fail("non-positive image or patch size");
    if (require_patch_multiple && (view.width % view.patch_size != 0 || view.height % view.patch_size != 0))
        fail("image size is not a multiple of the patch size");
    if (view.depth) {
        if (view.depth->width != view.width || view.depth->height != view.height)
            fail("depth map size does not match the image");
        for (double d : view.depth->values)
            if (!(d >= 0.0 || d == DepthMap::kNoSurface)) fail("depth map holds a negative or non-finite value");
    }
}

std::pair<int, int> patch_index(double u, double v, int patch_size) {
    auto index = [patch_size](double x) {
        double p = std::floor(x / patch_size);
        if (p * patch_size > x) p -= 1.0;
        return static_cast<int>(p);
    };
    return {index(u), index(v)};
}

std::optional<PixelProjection> project_point(const Vec3& point, const CameraView& view, int view_index) {
    if (!point.allFinite()) throw InputError("project_point: non-finite point coordinates");
    const Vec3 q = view.extrinsics.topLeftCorner<3, 3>() * point + view.extrinsics.topRightCorner<3, 1>();
    const Vec3 h = view.intrinsics * q;
    const double z = h.z();
    if (!(z > kMinDepth)) return std::nullopt;
    const double u = h.x() / z;
    const double v = h.y() / z;
    if (!(u >= 0.0 && u < view.width && v >= 0.0 && v < view.height)) return std::nullopt;
    PixelProjection out;
    out.u = u;
    out.v = v;
    out.depth = z;
    std::tie(out.patch_u, out.patch_v) = patch_index(u, v, view.patch_size);
    out.view_index = view_index;
    return out;
}

bool occlusion_filter(const PixelProjection& projection, const CameraView& view, double margin) {
    if (!view.depth) throw ConfigError(label(view) + ": occlusion test requires a depth map");
    const auto& map = *view.depth;
    const int x = std::min(static_cast<int>(std::floor(projection.u)), map.width - 1);
    const int y = std::min(static_cast<int>(std::floor(projection.v)), map.height - 1);
    const double reference = map.at(x, y);
    if (reference == DepthMap::kNoSurface) return false;
    return std::abs(projection.depth - reference) <= margin;
}

bool range_filter(const PixelProjection& projection, double near, double far) {
    return projection.depth >= near && projection.depth <= far;
}

std::optional<PixelProjection> project_visible(const Vec3& point, const CameraView& view, int view_index,
                                               const VisibilityFilter& filter) {
    auto projection = project_point(point, view, view_index);
    if (!projection) return std::nullopt;
    if (filter.occlusion && !occlusion_filter(*projection, view, filter.margin)) return std::nullopt;
    if (filter.range && !range_filter(*projection, filter.near, filter.far)) return std::nullopt;
    return projection;
}

Vec3 camera_center(const CameraView& view) {
    const Eigen::Matrix3d r = view.extrinsics.topLeftCorner<3, 3>();
    return -(r.transpose() * view.extrinsics.topRightCorner<3, 1>());
}

Vec3 pixel_ray(const CameraView& view, double u, double v) {
    const Vec3 camera_dir = view.intrinsics.inverse() * Vec3(u, v, 1.0);
    return view.extrinsics.topLeftCorner<3, 3>().transpose() * camera_dir;
}

Vec3 unproject_pixel(const CameraView& view, double u, double v, double depth) {
    return camera_center(view) + depth * pixel_ray(view, u, v);
}

CameraView look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, int patch_size,
                   double focal, double timestamp) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) throw ConfigError("look_at: up vector is parallel to the viewing direction");
    right.normalize();
    const Vec3 down = forward.cross(right);

    CameraView view;
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    view.extrinsics.setIdentity();
    view.extrinsics.topLeftCorner<3, 3>() = r;
    view.extrinsics.topRightCorner<3, 1>() = -(r * eye);
    view.intrinsics << focal, 0.0, width / 2.0, 0.0, focal, height / 2.0, 0.0, 0.0, 1.0;
    view.width = width;
    view.height = height;
    view.patch_size = patch_size;
    view.timestamp = timestamp;
    return view;
}

DepthMap rasterize_points(std::span<const Vec3> points, const CameraView& view) {
    DepthMap map(view.width, view.height);
    for (const auto& p : points) {
        const auto projection = project_point(p, view);
        if (!projection) continue;
        double& cell = map.at(static_cast<int>(std::floor(projection->u)), static_cast<int>(std::floor(projection->v)));
        if (cell == DepthMap::kNoSurface || projection->depth < cell) cell = projection->depth;
    }
    return map;
}

}  // namespace skipfuse::geometry
