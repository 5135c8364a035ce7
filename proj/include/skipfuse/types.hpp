#pragma once

#include <Eigen/Core>

namespace skipfuse {

/// Row-major dense matrix; one row per point throughout the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vec3 = Eigen::Vector3d;

inline constexpr int kIgnoreLabel = -1;

}  // namespace skipfuse
