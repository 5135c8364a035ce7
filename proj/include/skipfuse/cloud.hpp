#pragma once

#include <optional>
#include <vector>

#include "skipfuse/types.hpp"

namespace skipfuse::cloud {

struct PointCloud {
    Matrix positions;                  // N x 3, meters
    std::optional<Matrix> colors;      // N x 3 in [0, 1]
    std::optional<std::vector<int>> labels;
    int dataset_id = 0;

    int size() const { return static_cast<int>(positions.rows()); }
};

/// Throws DataError when positions are empty or non-finite, or a label is
/// neither kIgnoreLabel nor in [0, num_classes).
void validate(const PointCloud& cloud, int num_classes);

/// One representative per occupied grid cell. Voxels are ordered by their
/// representative's raw index, so voxel_to_raw is strictly increasing.
struct VoxelizedCloud {
    Matrix positions;               // M x 3
    std::vector<int> raw_to_voxel;  // N
    std::vector<int> voxel_to_raw;  // M
    double grid_size = 0.0;
    Vec3 origin = Vec3::Zero();     // cell (0, 0, 0) starts here

    int size() const { return static_cast<int>(positions.rows()); }
};

/// Grid sampling. Cell ids are floor((p - origin) / grid_size) per axis; the
/// origin defaults to the minimum corner of `positions`. The lowest raw
/// index in each cell becomes its representative.
VoxelizedCloud grid_sample(const Matrix& positions, double grid_size, std::optional<Vec3> origin = std::nullopt);
VoxelizedCloud grid_sample(const PointCloud& cloud, double grid_size);

/// Levels are 0-based: level 0 is the voxelized cloud, level l + 1 is grid
/// sampled from level l at twice the grid size, with a shared origin so
/// cells nest.
struct PoolingHierarchy {
    std::vector<Matrix> level_positions;
    std::vector<std::vector<int>> parent;  // parent[l][i]: index into level l + 1
    std::vector<double> grid_sizes;
    Vec3 origin = Vec3::Zero();

    int levels() const { return static_cast<int>(level_positions.size()); }
    int size(int level) const { return static_cast<int>(level_positions[level].rows()); }
    std::vector<int> level_sizes() const;
};

PoolingHierarchy build_hierarchy(const VoxelizedCloud& voxelized, int levels);

/// Row j of the result is the componentwise maximum over the level-`level`
/// rows whose parent is j. When `argmax` is given it receives, per output
/// element (row-major), the child row that supplied it; ties go to the
/// lowest child index.
Matrix max_pool(const Matrix& features, const PoolingHierarchy& hierarchy, int level,
                std::vector<int>* argmax = nullptr);

/// Copies each parent row (level + 1) to all of its children (level).
Matrix unpool(const Matrix& features, const PoolingHierarchy& hierarchy, int level);

}  // namespace skipfuse::cloud
