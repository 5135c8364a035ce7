#include "skipfuse/synthworld.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

#include "skipfuse/error.hpp"
#include "skipfuse/rng.hpp"

namespace skipfuse::synth {

using geometry::CameraView;
using geometry::DepthMap;

namespace {

const std::vector<GeometryType>& furniture() {
    static const std::vector<GeometryType> types{
        {"cabinet", {0.5, 0.4, 1.6}, {0.6, 0.5, 1.9}},
        {"table", {1.0, 0.6, 0.7}, {1.4, 0.8, 0.8}},
        {"crate", {0.5, 0.5, 0.3}, {0.7, 0.7, 0.45}},
        {"bed", {1.8, 1.2, 0.45}, {2.0, 1.4, 0.55}},
        {"shelf", {1.2, 0.3, 1.0}, {1.6, 0.4, 1.3}},
        {"pillar", {0.25, 0.25, 2.0}, {0.3, 0.3, 2.3}},
        {"counter", {1.6, 0.5, 0.85}, {2.0, 0.6, 0.95}},
        {"cube", {0.3, 0.3, 0.3}, {0.4, 0.4, 0.4}},
        {"platform", {1.4, 0.9, 0.2}, {1.8, 1.1, 0.3}},
    };
    return types;
}

bool inside_closed(const Vec3& p, const Box& b) {
    return (p.array() >= b.lo.array()).all() && (p.array() <= b.hi.array()).all();
}

bool overlaps(const Box& a, const Box& b, double gap) {
    for (int axis = 0; axis < 2; ++axis)
        if (a.hi[axis] + gap <= b.lo[axis] || b.hi[axis] + gap <= a.lo[axis]) return false;
    return true;
}

/// Samples round(area * density) points uniformly on an axis-aligned
/// rectangle with fixed coordinate `value` on `axis`.
void sample_face(const Box& owner, int axis, double value, double density, Rng& rng, std::span<const Box> boxes,
                 std::size_t owner_index, std::vector<Vec3>& points, std::vector<int>& labels) {
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    const double ea = owner.hi[a] - owner.lo[a];
    const double eb = owner.hi[b] - owner.lo[b];
    const auto count = static_cast<long>(std::lround(ea * eb * density));
    for (long i = 0; i < count; ++i) {
        Vec3 p;
        p[axis] = value;
        p[a] = owner.lo[a] + ea * rng.uniform();
        p[b] = owner.lo[b] + eb * rng.uniform();
        bool hidden = false;
        for (std::size_t k = 0; k < boxes.size() && !hidden; ++k)
            if (k != owner_index && inside_closed(p, boxes[k])) hidden = true;
        if (hidden) continue;
        points.push_back(p);
        labels.push_back(owner.label);
    }
}

}  // namespace

void SceneSpec::validate() const {
    if (num_classes < 2) throw ConfigError("scene spec: at least two classes are required");
    if (!(density > 0.0)) throw ConfigError("scene spec: density must be positive");
    if (!(noise >= 0.0)) throw ConfigError("scene spec: noise must be non-negative");
    if (!(room_min > 2.0 * path_inset) || room_max < room_min) throw ConfigError("scene spec: invalid room extents");
    if (min_objects < 0 || max_objects < min_objects) throw ConfigError("scene spec: invalid object count range");
    if (static_cast<int>(class_geometry.size()) != num_classes - 2)
        throw ConfigError("scene spec: class_geometry must list one geometry per object class");
    for (int g : class_geometry)
        if (g < 0 || g >= static_cast<int>(geometry.size())) throw ConfigError("scene spec: unknown geometry index");
    if (max_objects > 0 && num_classes <= 2) throw ConfigError("scene spec: objects need object classes");
    if (camera_count < 0) throw ConfigError("scene spec: negative camera count");
    if (patch_size < 1 || image_width % patch_size != 0 || image_height % patch_size != 0)
        throw ConfigError("scene spec: image size must be a multiple of the patch size");
    if (feature_dim < 1) throw ConfigError("scene spec: feature_dim must be positive");
}

std::vector<std::string> SceneSpec::class_names() const {
    std::vector<std::string> names{"floor", "wall"};
    std::vector<int> seen(geometry.size(), 0);
    std::vector<int> total(geometry.size(), 0);
    for (int g : class_geometry) ++total[static_cast<std::size_t>(g)];
    for (int g : class_geometry) {
        std::string name = geometry[static_cast<std::size_t>(g)].name;
        if (total[static_cast<std::size_t>(g)] > 1) name += "_" + std::string(1, static_cast<char>('a' + seen[static_cast<std::size_t>(g)]));
        ++seen[static_cast<std::size_t>(g)];
        names.push_back(name);
    }
    return names;
}

SceneSpec preset_spec(Preset preset, std::uint64_t seed) {
    SceneSpec spec;
    spec.geometry = furniture();
    spec.rng_seed = seed;
    if (preset == Preset::Easy) {
        spec.num_classes = 8;
        spec.class_geometry = {0, 1, 2, 3, 4, 6};
        spec.min_objects = 6;
        spec.max_objects = 10;
        spec.prototype_seed = 11;
    } else {
        spec.num_classes = 20;
        spec.class_geometry.clear();
        for (int g = 0; g < 9; ++g) {
            spec.class_geometry.push_back(g);
            spec.class_geometry.push_back(g);
        }
        spec.min_objects = 10;
        spec.max_objects = 14;
        spec.prototype_seed = 23;
    }
    return spec;
}

Preset parse_preset(const std::string& name) {
    if (name == "easy") return Preset::Easy;
    if (name == "hard") return Preset::Hard;
    throw ConfigError("unknown preset '" + name + "'");
}

std::string to_string(Preset preset) { return preset == Preset::Easy ? "easy" : "hard"; }

Trajectory parse_trajectory(const std::string& name) {
    if (name == "orbit") return Trajectory::Orbit;
    if (name == "wall_path") return Trajectory::WallPath;
    throw ConfigError("unknown trajectory '" + name + "'");
}

std::string to_string(Trajectory trajectory) { return trajectory == Trajectory::Orbit ? "orbit" : "wall_path"; }

Matrix make_prototypes(int num_classes, int dim, std::uint64_t seed) {
    Rng rng(seed);
    Matrix out(num_classes, dim);
    for (int c = 0; c < num_classes; ++c) {
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000) throw ConfigError("make_prototypes: cannot separate prototypes in this dimension");
            RowVector v(dim);
            for (int i = 0; i < dim; ++i) v[i] = rng.normal();
            if (v.norm() < 1e-12) continue;
            v.normalize();
            bool ok = true;
            for (int k = 0; k < c && ok; ++k) ok = out.row(k).dot(v) < 0.9;
            if (!ok) continue;
            out.row(c) = v;
            break;
        }
    }
    return out;
}

double ray_box(const Vec3& origin, const Vec3& dir, const Box& box) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (dir[a] == 0.0) {
            if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return -1.0;
            continue;
        }
        double t0 = (box.lo[a] - origin[a]) / dir[a];
        double t1 = (box.hi[a] - origin[a]) / dir[a];
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
    }
    if (t_near > t_far || t_far <= 0.0) return -1.0;
    return t_near > 0.0 ? t_near : -1.0;  // origins inside a box see nothing from it
}

DepthRender render_depth(const CameraView& view, std::span<const Box> boxes) {
    DepthRender out;
    out.depth = DepthMap(view.width, view.height);
    out.labels.assign(static_cast<std::size_t>(view.width) * view.height, -1);
    const Vec3 origin = geometry::camera_center(view);
    for (int y = 0; y < view.height; ++y) {
        for (int x = 0; x < view.width; ++x) {
            // the ray's camera-space z component is 1, so t equals depth
            const Vec3 dir = geometry::pixel_ray(view, x + 0.5, y + 0.5);
            double best = std::numeric_limits<double>::infinity();
            int label = -1;
            for (const auto& box : boxes) {
                const double t = ray_box(origin, dir, box);
                if (t > 0.0 && t < best) {
                    best = t;
                    label = box.label;
                }
            }
            if (label >= 0) {
                out.depth.at(x, y) = best;
                out.labels[static_cast<std::size_t>(y) * view.width + x] = label;
            }
        }
    }
    return out;
}

unproject::FeatureMap render_features(const CameraView& view, const DepthRender& render, const Matrix& prototypes,
                                      double noise, Rng& rng) {
    const int p = view.patch_size;
    const int dim = static_cast<int>(prototypes.cols());
    unproject::FeatureMap map(view.patch_rows(), view.patch_cols(), dim);
    std::vector<int> counts(static_cast<std::size_t>(prototypes.rows()));
    for (int r = 0; r < map.rows; ++r) {
        for (int c = 0; c < map.cols; ++c) {
            std::fill(counts.begin(), counts.end(), 0);
            int hits = 0;
            for (int y = r * p; y < (r + 1) * p; ++y)
                for (int x = c * p; x < (c + 1) * p; ++x) {
                    const int label = render.labels[static_cast<std::size_t>(y) * view.width + x];
                    if (label < 0) continue;
                    ++counts[static_cast<std::size_t>(label)];
                    ++hits;
                }
            double* f = map.at(r, c);
            for (std::size_t k = 0; k < counts.size() && hits > 0; ++k) {
                if (counts[k] == 0) continue;
                const double w = static_cast<double>(counts[k]) / hits;
                for (int i = 0; i < dim; ++i) f[i] += w * prototypes(static_cast<Eigen::Index>(k), i);
            }
            if (noise > 0.0)
                for (int i = 0; i < dim; ++i) f[i] += noise * rng.normal();
        }
    }
    return map;
}

double van_der_corput(std::uint64_t i) {
    double result = 0.0;
    double base = 0.5;
    while (i > 0) {
        if (i & 1U) result += base;
        base *= 0.5;
        i >>= 1U;
    }
    return result;
}

namespace {

Vec3 trajectory_point(const SceneSpec& spec, double t, double size_x, double size_y) {
    const double z = spec.camera_height;
    const double inset = spec.path_inset;
    if (spec.trajectory == Trajectory::Orbit) {
        const double radius = std::min(size_x, size_y) / 2.0 - inset;
        const double angle = 2.0 * std::numbers::pi * t;
        return {size_x / 2.0 + radius * std::cos(angle), size_y / 2.0 + radius * std::sin(angle), z};
    }
    // open U along three walls: (inset, Y - inset) -> (inset, inset) -> (X - inset, inset) -> (X - inset, Y - inset)
    const Vec3 corners[4] = {{inset, size_y - inset, z},
                             {inset, inset, z},
                             {size_x - inset, inset, z},
                             {size_x - inset, size_y - inset, z}};
    double lengths[3];
    double total = 0.0;
    for (int s = 0; s < 3; ++s) total += lengths[s] = (corners[s + 1] - corners[s]).norm();
    double distance = t * total;
    for (int s = 0; s < 3; ++s) {
        if (distance <= lengths[s] || s == 2)
            return corners[s] + (corners[s + 1] - corners[s]) * std::min(1.0, distance / lengths[s]);
        distance -= lengths[s];
    }
    return corners[3];
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.rng_seed, 0x5ce9e));
    Scene scene;
    scene.class_names = spec.class_names();

    const double size_x = rng.uniform(spec.room_min, spec.room_max);
    const double size_y = rng.uniform(spec.room_min, spec.room_max);
    const double height = spec.wall_height;
    constexpr double kThick = 0.1;

    auto& boxes = scene.boxes;
    boxes.push_back({{0, 0, -kThick}, {size_x, size_y, 0}, kFloorClass});
    boxes.push_back({{-kThick, -kThick, -kThick}, {0, size_y + kThick, height}, kWallClass});
    boxes.push_back({{size_x, -kThick, -kThick}, {size_x + kThick, size_y + kThick, height}, kWallClass});
    boxes.push_back({{0, -kThick, -kThick}, {size_x, 0, height}, kWallClass});
    boxes.push_back({{0, size_y, -kThick}, {size_x, size_y + kThick, height}, kWallClass});
    const std::size_t structural = boxes.size();

    const int object_classes = spec.num_classes - 2;
    const int objects = object_classes > 0
                            ? spec.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)))
                            : 0;
    constexpr double kWallGap = 0.3;
    constexpr double kObjectGap = 0.15;
    for (int o = 0; o < objects; ++o) {
        const int cls = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(object_classes)));
        const auto& type = spec.geometry[static_cast<std::size_t>(spec.class_geometry[static_cast<std::size_t>(cls - 2)])];
        for (int attempt = 0; attempt < 200; ++attempt) {
            Vec3 size;
            for (int a = 0; a < 3; ++a) size[a] = rng.uniform(type.size_min[a], type.size_max[a]);
            if (rng.uniform() < 0.5) std::swap(size[0], size[1]);
            const double span_x = size_x - 2 * kWallGap - size[0];
            const double span_y = size_y - 2 * kWallGap - size[1];
            if (span_x <= 0 || span_y <= 0) continue;
            Box box;
            box.lo = {kWallGap + rng.uniform() * span_x, kWallGap + rng.uniform() * span_y, 0.0};
            box.hi = box.lo + size;
            box.label = cls;
            bool clash = false;
            for (std::size_t k = structural; k < boxes.size() && !clash; ++k) clash = overlaps(box, boxes[k], kObjectGap);
            if (clash) continue;
            boxes.push_back(box);
            break;
        }
    }

    std::vector<Vec3> points;
    std::vector<int> labels;
    const double density = spec.density;
    // floor top face
    sample_face(boxes[0], 2, 0.0, density, rng, boxes, 0, points, labels);
    // inner wall faces
    {
        Box west{{0, 0, 0}, {0, size_y, height}, kWallClass};
        Box east{{size_x, 0, 0}, {size_x, size_y, height}, kWallClass};
        Box south{{0, 0, 0}, {size_x, 0, height}, kWallClass};
        Box north{{0, size_y, 0}, {size_x, size_y, height}, kWallClass};
        sample_face(west, 0, 0.0, density, rng, boxes, 1, points, labels);
        sample_face(east, 0, size_x, density, rng, boxes, 2, points, labels);
        sample_face(south, 1, 0.0, density, rng, boxes, 3, points, labels);
        sample_face(north, 1, size_y, density, rng, boxes, 4, points, labels);
    }
    for (std::size_t k = structural; k < boxes.size(); ++k) {
        const Box& b = boxes[k];
        sample_face(b, 2, b.hi.z(), density, rng, boxes, k, points, labels);
        sample_face(b, 0, b.lo.x(), density, rng, boxes, k, points, labels);
        sample_face(b, 0, b.hi.x(), density, rng, boxes, k, points, labels);
        sample_face(b, 1, b.lo.y(), density, rng, boxes, k, points, labels);
        sample_face(b, 1, b.hi.y(), density, rng, boxes, k, points, labels);
    }

    scene.cloud.positions.resize(static_cast<Eigen::Index>(points.size()), 3);
    for (std::size_t i = 0; i < points.size(); ++i) scene.cloud.positions.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
    scene.cloud.labels = std::move(labels);
    scene.cloud.dataset_id = spec.dataset_id;

    // Camera parameters follow a nested low-discrepancy sequence so adding
    // cameras only adds views; timestamps follow trajectory order.
    std::vector<double> ts;
    for (int j = 0; j < spec.camera_count; ++j) ts.push_back(van_der_corput(static_cast<std::uint64_t>(j) + 1));
    std::sort(ts.begin(), ts.end());
    const Matrix prototypes = make_prototypes(spec.num_classes, spec.feature_dim, spec.prototype_seed);
    scene.features.feature_dim = spec.feature_dim;
    const Vec3 target(size_x / 2.0, size_y / 2.0, 0.6);
    for (std::size_t j = 0; j < ts.size(); ++j) {
        const Vec3 eye = trajectory_point(spec, ts[j], size_x, size_y);
        auto view = geometry::look_at(eye, target, Vec3::UnitZ(), spec.image_width, spec.image_height, spec.patch_size,
                                      spec.focal, ts[j] * 60.0);
        view.name = "cam" + std::to_string(j);
        const auto render = render_depth(view, boxes);
        Rng noise_rng(derive_seed(spec.rng_seed, std::bit_cast<std::uint64_t>(ts[j])));
        scene.features.maps.push_back(render_features(view, render, prototypes, spec.noise, noise_rng));
        view.depth = render.depth;
        scene.views.push_back(std::move(view));
    }
    return scene;
}

}  // namespace skipfuse::synth
