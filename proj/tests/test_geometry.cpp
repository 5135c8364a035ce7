#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "skipfuse/error.hpp"
#include "skipfuse/geometry.hpp"
#include "skipfuse/rng.hpp"

using namespace skipfuse;
using namespace skipfuse::geometry;

namespace {

CameraView random_camera(Rng& rng) {
    const Vec3 eye(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 2.5));
    const Vec3 target(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1.5));
    return look_at(eye, target, Vec3(0, 0, 1), 80, 60, 10, rng.uniform(30, 90));
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("identity camera projects onto the principal point") {
    CameraView view;
    view.intrinsics << 100, 0, 50, 0, 100, 40, 0, 0, 1;
    view.width = 100;
    view.height = 80;
    view.patch_size = 10;
    const auto p = project_point(Vec3(0, 0, 2), view);
    REQUIRE(p);
    CHECK(p->u == doctest::Approx(50));
    CHECK(p->v == doctest::Approx(40));
    CHECK(p->depth == doctest::Approx(2));
    CHECK(p->patch_u == 5);
    CHECK(p->patch_v == 4);
}

TEST_CASE("points behind the camera or outside the rectangle are culled") {
    CameraView view;
    view.intrinsics << 100, 0, 50, 0, 100, 40, 0, 0, 1;
    view.width = 100;
    view.height = 80;
    CHECK_FALSE(project_point(Vec3(0, 0, -1), view));
    CHECK_FALSE(project_point(Vec3(0, 0, 0), view));
    // u = 100 exactly is outside, u just below is inside
    CHECK_FALSE(project_point(Vec3(0.5, 0, 1), view));
    CHECK(project_point(Vec3(0.4999, 0, 1), view));
    // u = 0 is inside
    CHECK(project_point(Vec3(-0.5, 0, 1), view));
    CHECK_FALSE(project_point(Vec3(-0.5001, 0, 1), view));
}

TEST_CASE("non-finite points are rejected") {
    CameraView view;
    CHECK_THROWS_AS(project_point(Vec3(NAN, 0, 1), view), InputError);
}

TEST_CASE("projection matches the composed homogeneous matrix") {
    Rng rng(11);
    int visible = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto view = random_camera(rng);
        const Vec3 p(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-1, 3));
        const auto got = project_point(p, view);
        const auto want = oracle::project(p, view);
        REQUIRE(got.has_value() == want.has_value());
        if (!got) continue;
        ++visible;
        CHECK(rel(got->u, want->u) < 1e-9);
        CHECK(rel(got->v, want->v) < 1e-9);
        CHECK(rel(got->depth, want->depth) < 1e-9);
    }
    CHECK(visible > 50);
}

TEST_CASE("unproject inverts project") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto view = random_camera(rng);
        const double u = rng.uniform(0, view.width), v = rng.uniform(0, view.height), d = rng.uniform(0.5, 5);
        const Vec3 w = unproject_pixel(view, u, v, d);
        const auto p = project_point(w, view);
        if (!p) continue;  // u, v within rounding of the border
        CHECK(p->u == doctest::Approx(u).epsilon(1e-9));
        CHECK(p->v == doctest::Approx(v).epsilon(1e-9));
        CHECK(p->depth == doctest::Approx(d).epsilon(1e-9));
    }
}

TEST_CASE("camera center projects to depth zero") {
    Rng rng(2);
    const auto view = random_camera(rng);
    const Vec3 c = camera_center(view);
    const Vec3 q = view.extrinsics.topLeftCorner<3, 3>() * c + view.extrinsics.topRightCorner<3, 1>();
    CHECK(q.norm() < 1e-12);
}

TEST_CASE("patch index floors and survives rounding up") {
    CHECK(patch_index(19.999, 9.0, 10) == std::pair{1, 0});
    CHECK(patch_index(20.0, 0.0, 10) == std::pair{2, 0});
    CHECK(patch_index(0.0, 59.9999999, 10) == std::pair{0, 5});
}

TEST_CASE("occlusion and range filters") {
    CameraView view;
    view.intrinsics << 10, 0, 2, 0, 10, 2, 0, 0, 1;
    view.width = 4;
    view.height = 4;
    PixelProjection p{1.5, 1.5, 2.0};
    CHECK_THROWS_AS(occlusion_filter(p, view, 0.05), ConfigError);
    view.depth = DepthMap(4, 4, 2.02);
    CHECK(occlusion_filter(p, view, 0.05));
    view.depth->at(1, 1) = 1.9;
    CHECK_FALSE(occlusion_filter(p, view, 0.05));
    view.depth->at(1, 1) = DepthMap::kNoSurface;
    CHECK_FALSE(occlusion_filter(p, view, 0.05));

    CHECK(range_filter(p, 1.0, 4.0));
    CHECK(range_filter({0, 0, 1.0}, 1.0, 4.0));
    CHECK(range_filter({0, 0, 4.0}, 1.0, 4.0));
    CHECK_FALSE(range_filter({0, 0, 4.01}, 1.0, 4.0));
    CHECK_FALSE(range_filter({0, 0, 0.99}, 1.0, 4.0));
}

TEST_CASE("rasterized z-buffer agrees with the quadratic oracle") {
    Rng rng(9);
    for (int scene = 0; scene < 5; ++scene) {
        const auto view = look_at(Vec3(0, -3, 1), Vec3(0, 0, 0.5), Vec3(0, 0, 1), 64, 64, 8, 60);
        std::vector<Vec3> pts;
        for (int i = 0; i < 800; ++i) pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1));
        auto with_depth = view;
        with_depth.depth = rasterize_points(pts, view);
        std::vector<int> kept;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto p = project_point(pts[i], with_depth);
            if (p && occlusion_filter(*p, with_depth, 0.05)) kept.push_back(static_cast<int>(i));
        }
        CHECK(kept == oracle::zbuffer_kept(pts, view, 0.05));
    }
}

TEST_CASE("validate rejects bad calibration") {
    CameraView view;
    view.width = 80;
    view.height = 60;
    view.patch_size = 10;
    view.intrinsics << 50, 0, 40, 0, 50, 30, 0, 0, 1;
    CHECK_NOTHROW(validate(view));
    view.patch_size = 7;
    CHECK_THROWS_AS(validate(view), ConfigError);
    CHECK_NOTHROW(validate(view, false));
    view.patch_size = 10;
    view.extrinsics(0, 0) = 2.0;  // not a rotation
    CHECK_THROWS_AS(validate(view), ConfigError);
}

}
