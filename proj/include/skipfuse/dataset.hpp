#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "skipfuse/bundle.hpp"
#include "skipfuse/config.hpp"
#include "skipfuse/unproject.hpp"

namespace skipfuse::dataset {

enum class Which { Train, Test, All };
Which parse_which(const std::string& name);

/// Writes each bundle into dir/<name> and a manifest.json listing every
/// file with its hash, the train/test split and the generating config.
/// Returns the manifest's own hash.
std::uint64_t write_collection(const std::filesystem::path& dir, std::span<const bundle::SceneBundle> bundles,
                               const RunConfig& config);

/// A directory with manifest.json yields the requested split; a directory
/// with meta.json is a single bundle (always selected).
std::vector<bundle::SceneBundle> load(std::span<const std::filesystem::path> dirs, Which which);

/// Output of the project command: per-voxel features, source view and
/// positions, plus a JSON sidecar.
struct ProjectionDump {
    Matrix positions;  // M x 3
    Matrix features;   // M x D
    std::vector<int> source_view;
    std::vector<int> selected_views;
    double coverage = 0.0;
};

/// Writes <prefix>.points.bin, <prefix>.features.bin, <prefix>.source.bin
/// and <prefix>.json.
void write_projection(const std::filesystem::path& prefix, const ProjectionDump& dump, const std::string& policy_echo);
ProjectionDump read_projection(const std::filesystem::path& prefix);

}  // namespace skipfuse::dataset
