#include "skipfuse/cloud.hpp"

#include <array>
#include <cmath>
#include <string>
#include <unordered_map>

#include "skipfuse/error.hpp"

namespace skipfuse::cloud {

namespace {

using CellKey = std::array<std::int64_t, 3>;

struct CellHash {
    std::size_t operator()(const CellKey& k) const noexcept {
        std::uint64_t h = 1469598103934665603ULL;
        for (auto v : k) {
            h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        }
        return static_cast<std::size_t>(h);
    }
};

}  // namespace

void validate(const PointCloud& cloud, int num_classes) {
    const int n = cloud.size();
    if (n < 1 || cloud.positions.cols() != 3) throw DataError("point cloud must hold at least one 3-D point");
    if (!cloud.positions.allFinite()) throw DataError("point cloud holds non-finite positions");
    if (cloud.colors && (cloud.colors->rows() != n || cloud.colors->cols() != 3))
        throw ShapeError("color array does not match the point count");
    if (cloud.labels) {
        if (static_cast<int>(cloud.labels->size()) != n) throw ShapeError("label array does not match the point count");
        for (int label : *cloud.labels)
            if (label != kIgnoreLabel && (label < 0 || label >= num_classes))
                throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
    }
}

VoxelizedCloud grid_sample(const Matrix& positions, double grid_size, std::optional<Vec3> origin) {
    if (!(grid_size > 0.0)) throw InputError("grid_sample: grid size must be positive");
    if (positions.cols() != 3) throw ShapeError("grid_sample: positions must have 3 columns");
    if (positions.rows() == 0) throw DataError("grid_sample: empty point cloud");
    if (!positions.allFinite()) throw DataError("grid_sample: non-finite point coordinates");
    const auto n = positions.rows();

    VoxelizedCloud out;
    out.grid_size = grid_size;
    out.origin = origin ? *origin : (n > 0 ? Vec3(positions.colwise().minCoeff().transpose()) : Vec3::Zero());
    out.raw_to_voxel.resize(n);

    std::unordered_map<CellKey, int, CellHash> cells;
    cells.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        CellKey key;
        for (int a = 0; a < 3; ++a)
            key[a] = static_cast<std::int64_t>(std::floor((positions(i, a) - out.origin[a]) / grid_size));
        auto [it, inserted] = cells.try_emplace(key, static_cast<int>(out.voxel_to_raw.size()));
        if (inserted) out.voxel_to_raw.push_back(static_cast<int>(i));
        out.raw_to_voxel[i] = it->second;
    }

    out.positions.resize(static_cast<Eigen::Index>(out.voxel_to_raw.size()), 3);
    for (std::size_t j = 0; j < out.voxel_to_raw.size(); ++j)
        out.positions.row(static_cast<Eigen::Index>(j)) = positions.row(out.voxel_to_raw[j]);
    return out;
}

VoxelizedCloud grid_sample(const PointCloud& cloud, double grid_size) {
    return grid_sample(cloud.positions, grid_size);
}

std::vector<int> PoolingHierarchy::level_sizes() const {
    std::vector<int> sizes;
    for (int l = 0; l < levels(); ++l) sizes.push_back(size(l));
    return sizes;
}

PoolingHierarchy build_hierarchy(const VoxelizedCloud& voxelized, int levels) {
    if (levels < 1) throw InputError("build_hierarchy: levels must be at least 1");
    PoolingHierarchy h;
    h.origin = voxelized.origin;
    h.level_positions.push_back(voxelized.positions);
    h.grid_sizes.push_back(voxelized.grid_size);
    for (int l = 1; l < levels; ++l) {
        const double grid = voxelized.grid_size * std::ldexp(1.0, l);
        auto coarse = grid_sample(h.level_positions.back(), grid, h.origin);
        h.parent.push_back(std::move(coarse.raw_to_voxel));
        h.level_positions.push_back(std::move(coarse.positions));
        h.grid_sizes.push_back(grid);
    }
    return h;
}

Matrix max_pool(const Matrix& features, const PoolingHierarchy& hierarchy, int level, std::vector<int>* argmax) {
    if (level < 0 || level + 1 >= hierarchy.levels()) throw InputError("max_pool: level out of range");
    if (features.rows() != hierarchy.size(level))
        throw ShapeError("max_pool: expected " + std::to_string(hierarchy.size(level)) + " rows, got " +
                         std::to_string(features.rows()));
    const auto& parent = hierarchy.parent[level];
    const auto cols = features.cols();
    Matrix out(hierarchy.size(level + 1), cols);
    std::vector<int> best(static_cast<std::size_t>(out.size()), -1);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const int j = parent[i];
        for (Eigen::Index c = 0; c < cols; ++c) {
            int& b = best[static_cast<std::size_t>(j * cols + c)];
            // Children are visited in increasing index order, so a strict
            // comparison keeps the lowest index on ties.
            if (b < 0 || features(i, c) > out(j, c)) {
                out(j, c) = features(i, c);
                b = static_cast<int>(i);
            }
        }
    }
    if (argmax) *argmax = std::move(best);
    return out;
}

Matrix unpool(const Matrix& features, const PoolingHierarchy& hierarchy, int level) {
    if (level < 0 || level + 1 >= hierarchy.levels()) throw InputError("unpool: level out of range");
    if (features.rows() != hierarchy.size(level + 1))
        throw ShapeError("unpool: expected " + std::to_string(hierarchy.size(level + 1)) + " rows, got " +
                         std::to_string(features.rows()));
    const auto& parent = hierarchy.parent[level];
    Matrix out(hierarchy.size(level), features.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = features.row(parent[i]);
    return out;
}

}  // namespace skipfuse::cloud
