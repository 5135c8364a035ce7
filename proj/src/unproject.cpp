#include "skipfuse/unproject.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skipfuse/error.hpp"
#include "skipfuse/parallel.hpp"
#include "skipfuse/rng.hpp"

namespace skipfuse::unproject {

using geometry::CameraView;

void validate(const FeatureMapSet& maps, std::span<const CameraView> views) {
    if (maps.maps.size() != views.size())
        throw ShapeError("feature maps: " + std::to_string(maps.maps.size()) + " maps for " +
                         std::to_string(views.size()) + " views");
    for (std::size_t k = 0; k < views.size(); ++k) {
        const auto& m = maps.maps[k];
        if (m.dim != maps.feature_dim) throw ShapeError("feature map " + std::to_string(k) + ": dimension mismatch");
        if (m.rows != views[k].patch_rows() || m.cols != views[k].patch_cols())
            throw ShapeError("feature map " + std::to_string(k) + ": grid does not match the view's patch layout");
        if (m.data.size() != static_cast<std::size_t>(m.rows) * m.cols * m.dim)
            throw ShapeError("feature map " + std::to_string(k) + ": storage size mismatch");
    }
}

void sample_bilinear(const FeatureMap& map, double u, double v, int patch_size, double* out) {
    const double gx = std::clamp(u / patch_size - 0.5, 0.0, static_cast<double>(map.cols - 1));
    const double gy = std::clamp(v / patch_size - 0.5, 0.0, static_cast<double>(map.rows - 1));
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const int x1 = std::min(x0 + 1, map.cols - 1);
    const int y1 = std::min(y0 + 1, map.rows - 1);
    const double fx = gx - x0;
    const double fy = gy - y0;
    const double* a = map.at(y0, x0);
    const double* b = map.at(y0, x1);
    const double* c = map.at(y1, x0);
    const double* d = map.at(y1, x1);
    for (int i = 0; i < map.dim; ++i)
        out[i] = (1 - fy) * ((1 - fx) * a[i] + fx * b[i]) + fy * ((1 - fx) * c[i] + fx * d[i]);
}

std::vector<Matrix> build_pyramid(const Matrix& features, const cloud::PoolingHierarchy& hierarchy) {
    std::vector<Matrix> pyramid;
    pyramid.reserve(static_cast<std::size_t>(hierarchy.levels()));
    pyramid.push_back(features);
    for (int l = 0; l + 1 < hierarchy.levels(); ++l) pyramid.push_back(cloud::max_pool(pyramid.back(), hierarchy, l));
    return pyramid;
}

FeatureAssignment assign_features(const cloud::PoolingHierarchy& hierarchy, std::span<const CameraView> views,
                                  const FeatureMapSet& maps, const AssignmentPolicy& policy) {
    validate(maps, views);
    const Matrix& points = hierarchy.level_positions.at(0);
    const auto m = static_cast<std::size_t>(points.rows());
    const int dim = maps.feature_dim;

    FeatureAssignment out;
    out.features = Matrix::Zero(static_cast<Eigen::Index>(m), dim);
    out.source_view.assign(m, -1);

    parallel_for(m, policy.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<geometry::PixelProjection> hits;
        std::vector<double> scratch(static_cast<std::size_t>(dim));
        for (std::size_t i = begin; i < end; ++i) {
            hits.clear();
            const Vec3 p = points.row(static_cast<Eigen::Index>(i)).transpose();
            for (std::size_t k = 0; k < views.size(); ++k)
                if (auto hit = geometry::project_visible(p, views[k], static_cast<int>(k), policy.filter))
                    hits.push_back(*hit);
            if (hits.empty()) continue;

            auto row = out.features.row(static_cast<Eigen::Index>(i));
            auto accumulate = [&](const geometry::PixelProjection& hit, bool overwrite) {
                const auto& map = maps.maps[static_cast<std::size_t>(hit.view_index)];
                const double* src = nullptr;
                if (policy.sampling == Sampling::NearestPatch) {
                    src = map.at(hit.patch_v, hit.patch_u);
                } else {
                    sample_bilinear(map, hit.u, hit.v, views[static_cast<std::size_t>(hit.view_index)].patch_size,
                                    scratch.data());
                    src = scratch.data();
                }
                if (overwrite) {
                    for (int c = 0; c < dim; ++c) row(c) = src[c];
                } else {
                    for (int c = 0; c < dim; ++c) row(c) += src[c];
                }
            };

            if (policy.multi_view == MultiView::RandomOne) {
                const auto pick = bounded(derive_seed(policy.rng_seed, i), hits.size());
                accumulate(hits[pick], true);
                out.source_view[i] = hits[pick].view_index;
            } else {
                for (const auto& hit : hits) accumulate(hit, false);
                row /= static_cast<double>(hits.size());
                out.source_view[i] = hits.front().view_index;
            }
        }
    });

    for (std::size_t i = 0; i < m; ++i)
        if (out.source_view[i] >= 0) out.visible_set.push_back(static_cast<int>(i));
    out.pyramid = build_pyramid(out.features, hierarchy);
    return out;
}

std::vector<int> select_views(std::span<const CameraView> views, int k, Selection strategy, std::uint64_t rng_seed) {
    const int n = static_cast<int>(views.size());
    if (k < 0 || k > n)
        throw InputError("select_views: cannot select " + std::to_string(k) + " of " + std::to_string(n) + " views");
    for (int i = 1; i < n; ++i)
        if (views[static_cast<std::size_t>(i)].timestamp < views[static_cast<std::size_t>(i - 1)].timestamp)
            throw InputError("select_views: views must be sorted by timestamp");
    std::vector<int> out;
    if (k == 0) return out;

    if (strategy == Selection::Equidistant) {
        std::vector<char> used(static_cast<std::size_t>(n), 0);
        std::vector<int> pending;
        for (int j = 0; j < k; ++j) {
            const int idx = k == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(j) * (n - 1) / (k - 1)));
            if (used[static_cast<std::size_t>(idx)]) {
                pending.push_back(idx);
            } else {
                used[static_cast<std::size_t>(idx)] = 1;
                out.push_back(idx);
            }
        }
        for (int target : pending) {
            for (int d = 1; d < n; ++d) {
                if (target - d >= 0 && !used[static_cast<std::size_t>(target - d)]) {
                    used[static_cast<std::size_t>(target - d)] = 1;
                    out.push_back(target - d);
                    break;
                }
                if (target + d < n && !used[static_cast<std::size_t>(target + d)]) {
                    used[static_cast<std::size_t>(target + d)] = 1;
                    out.push_back(target + d);
                    break;
                }
            }
        }
    } else {
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(rng_seed);
        for (int i = 0; i < k; ++i) {
            const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
            std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        }
        out.assign(perm.begin(), perm.begin() + k);
    }
    std::sort(out.begin(), out.end());
    return out;
}

double coverage_fraction(const FeatureAssignment& assignment, std::span<const int> labels, int ignore_label) {
    if (labels.size() != assignment.source_view.size())
        throw ShapeError("coverage_fraction: label count does not match the assignment");
    std::size_t labeled = 0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == ignore_label) continue;
        ++labeled;
        if (assignment.source_view[i] >= 0) ++seen;
    }
    return labeled == 0 ? 0.0 : static_cast<double>(seen) / static_cast<double>(labeled);
}

std::pair<std::vector<CameraView>, FeatureMapSet> subset(std::span<const CameraView> views, const FeatureMapSet& maps,
                                                         std::span<const int> indices) {
    std::vector<CameraView> v;
    FeatureMapSet m;
    m.feature_dim = maps.feature_dim;
    for (int idx : indices) {
        v.push_back(views[static_cast<std::size_t>(idx)]);
        if (!maps.maps.empty()) m.maps.push_back(maps.maps[static_cast<std::size_t>(idx)]);
    }
    return {std::move(v), std::move(m)};
}

Sampling parse_sampling(const std::string& name) {
    if (name == "nearest" || name == "nearest_patch") return Sampling::NearestPatch;
    if (name == "bilinear") return Sampling::Bilinear;
    throw ConfigError("unknown sampling mode '" + name + "'");
}

MultiView parse_multi_view(const std::string& name) {
    if (name == "random_one" || name == "random") return MultiView::RandomOne;
    if (name == "average") return MultiView::Average;
    throw ConfigError("unknown multi-view mode '" + name + "'");
}

Selection parse_selection(const std::string& name) {
    if (name == "random") return Selection::Random;
    if (name == "equidistant" || name == "eqdist") return Selection::Equidistant;
    throw ConfigError("unknown view selection strategy '" + name + "'");
}

std::string to_string(Sampling s) { return s == Sampling::NearestPatch ? "nearest" : "bilinear"; }
std::string to_string(MultiView m) { return m == MultiView::RandomOne ? "random_one" : "average"; }
std::string to_string(Selection s) { return s == Selection::Random ? "random" : "equidistant"; }

}  // namespace skipfuse::unproject
