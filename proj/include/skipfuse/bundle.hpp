#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skipfuse/cloud.hpp"
#include "skipfuse/geometry.hpp"
#include "skipfuse/synthworld.hpp"
#include "skipfuse/unproject.hpp"

namespace skipfuse::bundle {

inline constexpr int kSchemaVersion = 1;
inline constexpr float kDepthSentinel = -1.0F;

/// In-memory form of a scene bundle directory:
///   meta.json, points.bin, labels.bin, [colors.bin], cameras.json,
///   depth_<k>.bin, feat_<k>.bin + feat_<k>.json
/// Binary arrays are headerless little-endian float32 / int32.
struct SceneBundle {
    std::string name;
    std::string preset;  // generator preset, empty for external data
    cloud::PointCloud cloud;
    std::vector<std::string> class_names;
    std::vector<geometry::CameraView> views;
    std::optional<unproject::FeatureMapSet> features;
    std::string missing_features;  // first absent feature file, when features is unset

    int num_classes() const { return static_cast<int>(class_names.size()); }
};

SceneBundle from_scene(const synth::Scene& scene, std::string name, std::string preset);

/// Writes every file of the bundle into `dir` (created if needed).
void write_bundle(const std::filesystem::path& dir, const SceneBundle& bundle);

/// Reads and validates a bundle. Missing feature files leave `features`
/// unset; every other inconsistency throws DataError naming the file.
SceneBundle read_bundle(const std::filesystem::path& dir);

/// Throws DataError naming the missing file unless features are present.
const unproject::FeatureMapSet& require_features(const SceneBundle& bundle);

// Headerless little-endian array files.
void write_f32(const std::filesystem::path& path, std::span<const double> values);
void write_i32(const std::filesystem::path& path, std::span<const int> values);
std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count);
std::vector<int> read_i32(const std::filesystem::path& path, std::size_t expected_count);

/// FNV-1a over a file's bytes.
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex(std::uint64_t value);

}  // namespace skipfuse::bundle
