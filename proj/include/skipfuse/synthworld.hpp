#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skipfuse/cloud.hpp"
#include "skipfuse/geometry.hpp"
#include "skipfuse/rng.hpp"
#include "skipfuse/types.hpp"
#include "skipfuse/unproject.hpp"

namespace skipfuse::synth {

struct Box {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();
    int label = 0;
};

/// Size range of a furniture-like block (x, y, z extents in meters).
struct GeometryType {
    std::string name;
    Vec3 size_min;
    Vec3 size_max;
};

enum class Trajectory { Orbit, WallPath };
enum class Preset { Easy, Hard };

inline constexpr int kFloorClass = 0;
inline constexpr int kWallClass = 1;

/// Scene generator settings. Object classes start at 2; object class c uses
/// geometry type class_geometry[c - 2], so classes sharing a type differ
/// only in their teacher features.
struct SceneSpec {
    double room_min = 5.0;  // x and y extents drawn from [room_min, room_max]
    double room_max = 7.0;
    double wall_height = 2.5;
    int min_objects = 6;
    int max_objects = 10;
    int num_classes = 8;
    std::vector<GeometryType> geometry;
    std::vector<int> class_geometry;
    double density = 12.0;  // points per square meter
    int camera_count = 30;
    Trajectory trajectory = Trajectory::WallPath;
    int image_width = 80;
    int image_height = 60;
    int patch_size = 10;
    double focal = 50.0;
    double camera_height = 1.5;
    double path_inset = 0.9;
    int feature_dim = 16;
    double noise = 0.1;  // per-dimension standard deviation
    std::uint64_t prototype_seed = 7;
    std::uint64_t rng_seed = 0;
    int dataset_id = 0;

    /// Throws ConfigError when the spec cannot describe a scene.
    void validate() const;
    std::vector<std::string> class_names() const;
};

/// "easy": 8 classes, every object class has its own geometry.
/// "hard": 20 classes, nine geometry types each shared by two classes.
SceneSpec preset_spec(Preset preset, std::uint64_t seed);
Preset parse_preset(const std::string& name);
std::string to_string(Preset preset);
Trajectory parse_trajectory(const std::string& name);
std::string to_string(Trajectory trajectory);

/// C x D unit-norm rows with pairwise cosine below 0.9 (rows are redrawn
/// until that holds).
Matrix make_prototypes(int num_classes, int dim, std::uint64_t seed);

/// Nearest hit distance t > 0 along origin + t * dir, or a negative value.
double ray_box(const Vec3& origin, const Vec3& dir, const Box& box);

struct DepthRender {
    geometry::DepthMap depth;
    std::vector<int> labels;  // per pixel, -1 where nothing is hit
};

/// Casts one ray per pixel center and keeps the nearest box hit as
/// camera-space depth; misses get DepthMap::kNoSurface.
DepthRender render_depth(const geometry::CameraView& view, std::span<const Box> boxes);

/// Patch features: hit-pixel-weighted mean prototype per patch plus
/// isotropic Gaussian noise. Patches without hits get noise only.
unproject::FeatureMap render_features(const geometry::CameraView& view, const DepthRender& render,
                                      const Matrix& prototypes, double noise, Rng& rng);

struct Scene {
    cloud::PointCloud cloud;
    std::vector<geometry::CameraView> views;  // sorted by timestamp, depth maps attached
    unproject::FeatureMapSet features;
    std::vector<Box> boxes;
    std::vector<std::string> class_names;
};

Scene generate_scene(const SceneSpec& spec);

/// Radical inverse in base 2 of i; the first n values are nested in n.
double van_der_corput(std::uint64_t i);

}  // namespace skipfuse::synth
