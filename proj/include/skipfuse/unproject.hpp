#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skipfuse/cloud.hpp"
#include "skipfuse/geometry.hpp"
#include "skipfuse/types.hpp"

namespace skipfuse::unproject {

/// Patch-level feature grid of one view, row-major rows x cols x dim.
struct FeatureMap {
    int rows = 0;
    int cols = 0;
    int dim = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int r, int c, int d) : rows(r), cols(c), dim(d), data(static_cast<std::size_t>(r) * c * d, 0.0) {}

    const double* at(int row, int col) const { return data.data() + (static_cast<std::size_t>(row) * cols + col) * dim; }
    double* at(int row, int col) { return data.data() + (static_cast<std::size_t>(row) * cols + col) * dim; }
};

struct FeatureMapSet {
    std::vector<FeatureMap> maps;  // one per view
    int feature_dim = 0;
};

/// Throws ShapeError unless every map matches its view's patch grid and the
/// shared feature dimension.
void validate(const FeatureMapSet& maps, std::span<const geometry::CameraView> views);

enum class Sampling { NearestPatch, Bilinear };
enum class MultiView { RandomOne, Average };
enum class Selection { Random, Equidistant };

struct AssignmentPolicy {
    Sampling sampling = Sampling::NearestPatch;
    MultiView multi_view = MultiView::RandomOne;
    std::uint64_t rng_seed = 0;
    geometry::VisibilityFilter filter = geometry::VisibilityFilter::indoor();
    int threads = 1;
};

struct FeatureAssignment {
    Matrix features;               // M x D_2D, zero rows for invisible points
    std::vector<int> source_view;  // -1 when invisible
    std::vector<int> visible_set;  // sorted
    std::vector<Matrix> pyramid;   // pyramid[0] == features, then max-pooled per level

    int size() const { return static_cast<int>(features.rows()); }
};

/// Unprojects patch features onto level 0 of `hierarchy`. `views` and
/// `maps.maps` are aligned; source_view indexes into them. Under RandomOne
/// the view for point i is drawn from a stream keyed by (rng_seed, i). Under
/// Average, source_view records the first surviving view.
FeatureAssignment assign_features(const cloud::PoolingHierarchy& hierarchy,
                                  std::span<const geometry::CameraView> views, const FeatureMapSet& maps,
                                  const AssignmentPolicy& policy);

/// Rebuilds the pooled pyramid for a level-0 feature matrix.
std::vector<Matrix> build_pyramid(const Matrix& features, const cloud::PoolingHierarchy& hierarchy);

/// Bilinear sample of a patch grid at pixel (u, v): grid coordinates
/// (u / P - 0.5, v / P - 0.5) with edge clamping.
void sample_bilinear(const FeatureMap& map, double u, double v, int patch_size, double* out);

/// Equidistant: round(j (n - 1) / (k - 1)), duplicates replaced by the
/// nearest unused index. Random: the first k entries of a seeded
/// permutation (so selections are nested in k), returned sorted.
/// Views must be sorted by timestamp. Throws InputError when k > n.
std::vector<int> select_views(std::span<const geometry::CameraView> views, int k, Selection strategy,
                              std::uint64_t rng_seed);

/// |V ∩ labeled| / |labeled|; 0 when nothing is labeled.
double coverage_fraction(const FeatureAssignment& assignment, std::span<const int> labels,
                         int ignore_label = kIgnoreLabel);

/// Views and maps restricted to `indices`, in that order.
std::pair<std::vector<geometry::CameraView>, FeatureMapSet> subset(std::span<const geometry::CameraView> views,
                                                                   const FeatureMapSet& maps,
                                                                   std::span<const int> indices);

Sampling parse_sampling(const std::string& name);
MultiView parse_multi_view(const std::string& name);
Selection parse_selection(const std::string& name);
std::string to_string(Sampling s);
std::string to_string(MultiView m);
std::string to_string(Selection s);

}  // namespace skipfuse::unproject
