#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "skipfuse/cloud.hpp"
#include "skipfuse/config.hpp"
#include "skipfuse/error.hpp"
#include "skipfuse/evalkit.hpp"
#include "skipfuse/experiment.hpp"
#include "skipfuse/geometry.hpp"
#include "skipfuse/loss.hpp"
#include "skipfuse/unproject.hpp"

namespace py = pybind11;
using namespace skipfuse;

namespace {

RunConfig config_from(const std::map<std::string, std::string>& overrides) {
    RunConfig c;
    for (const auto& [k, v] : overrides) c.set(k, v);
    return c;
}

geometry::CameraView make_view(const Eigen::Matrix3d& intrinsics, const Eigen::Matrix4d& extrinsics, int width,
                               int height, int patch_size) {
    geometry::CameraView v;
    v.intrinsics = intrinsics;
    v.extrinsics = extrinsics;
    v.width = width;
    v.height = height;
    v.patch_size = patch_size;
    geometry::validate(v);
    return v;
}

py::dict miou_dict(const eval::MiouResult& m) {
    py::list per;
    for (const auto& c : m.per_class) per.append(c ? py::cast(*c) : py::none());
    py::dict d;
    d["miou"] = m.mean;
    d["per_class"] = per;
    d["counted"] = m.counted;
    return d;
}

// Trains one model on the synthetic train split and evaluates it on the
// held-out scenes, as a sweep cell would.
py::dict train_and_evaluate(const std::map<std::string, std::string>& overrides) {
    const auto cfg = config_from(overrides);
    const auto settings = experiment::Settings::from(cfg);
    const auto mode = experiment::parse_mode(cfg.get("train.mode"));
    if (mode == experiment::Mode::Distill) throw ConfigError("train_and_evaluate: use distill_and_evaluate");
    std::vector<experiment::PreparedScene> all;
    for (const auto& b : experiment::synthesize(cfg))
        all.push_back(experiment::prepare(b, settings.grid_size, settings.levels));
    const auto split = experiment::split_indices(static_cast<int>(all.size()), cfg.get_int("synth.test_scenes"));
    std::vector<experiment::PreparedScene> train_set, test_set;
    for (int i : split.train) train_set.push_back(all[static_cast<std::size_t>(i)]);
    for (int i : split.test) test_set.push_back(all[static_cast<std::size_t>(i)]);

    py::gil_scoped_release release;
    auto ck = experiment::init_checkpoint(settings, mode, train_set, cfg.dump());
    const auto report = experiment::train(ck, train_set, settings, mode,
                                          experiment::phase_steps(settings, mode, train_set), nullptr);
    const auto ev = experiment::evaluate(ck.net, test_set, settings, settings.split_visible);
    py::gil_scoped_acquire acquire;
    py::dict d = miou_dict(ev.miou);
    d["coverage"] = ev.coverage;
    d["steps"] = report.steps_run;
    d["first_loss"] = report.first_loss;
    d["last_loss"] = report.last_loss;
    if (ev.split) {
        if (ev.split->visible) d["visible"] = miou_dict(*ev.split->visible);
        if (ev.split->invisible) d["invisible"] = miou_dict(*ev.split->invisible);
    }
    return d;
}

}  // namespace

PYBIND11_MODULE(_skipfuse, m) {
    m.doc() = "image-feature injection and distillation for point-cloud segmentation";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    auto data = py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", data.ptr());
    py::register_exception<InputError>(m, "InputError", data.ptr());
    py::register_exception<EmptyVisibleSet>(m, "EmptyVisibleSet", data.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<InternalError>(m, "InternalError", base.ptr());

    m.def(
        "project_point",
        [](const Vec3& point, const Eigen::Matrix3d& intrinsics, const Eigen::Matrix4d& extrinsics, int width,
           int height, int patch_size) -> py::object {
            const auto p = geometry::project_point(point, make_view(intrinsics, extrinsics, width, height, patch_size));
            if (!p) return py::none();
            py::dict d;
            d["u"] = p->u;
            d["v"] = p->v;
            d["depth"] = p->depth;
            d["patch"] = py::make_tuple(p->patch_u, p->patch_v);
            return d;
        },
        py::arg("point"), py::arg("intrinsics"), py::arg("extrinsics"), py::arg("width"), py::arg("height"),
        py::arg("patch_size") = 1, "Pixel coordinates and depth of a world point, or None when culled.");

    m.def(
        "grid_sample",
        [](const Matrix& positions, double grid_size) {
            const auto v = cloud::grid_sample(positions, grid_size);
            py::dict d;
            d["positions"] = v.positions;
            d["raw_to_voxel"] = v.raw_to_voxel;
            d["voxel_to_raw"] = v.voxel_to_raw;
            d["origin"] = Vec3(v.origin);
            return d;
        },
        py::arg("positions"), py::arg("grid_size"), "One representative (lowest index) per occupied voxel.");

    m.def(
        "build_hierarchy",
        [](const Matrix& positions, double grid_size, int levels) {
            const auto h = cloud::build_hierarchy(cloud::grid_sample(positions, grid_size), levels);
            py::dict d;
            d["level_sizes"] = h.level_sizes();
            d["parent"] = h.parent;
            d["grid_sizes"] = h.grid_sizes;
            return d;
        },
        py::arg("positions"), py::arg("grid_size"), py::arg("levels"));

    m.def(
        "cosine_loss",
        [](const Matrix& pred, const Matrix& target, const std::vector<int>& visible) {
            const auto l = loss::cosine_loss(pred, target, visible);
            return py::make_tuple(l.value, l.gradient);
        },
        py::arg("pred"), py::arg("target"), py::arg("visible"),
        "Mean 1 - cos over the visible rows and its gradient with respect to pred.");

    m.def(
        "miou",
        [](const std::vector<int>& pred, const std::vector<int>& gt, int num_classes, int ignore_label) {
            return miou_dict(eval::miou(pred, gt, num_classes, ignore_label));
        },
        py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("ignore_label") = kIgnoreLabel);

    m.def("pca_rgb", &eval::pca_rgb, py::arg("features"), "Per-row colors in [0, 1] from the top three components.");

    m.def(
        "select_views",
        [](const std::vector<double>& timestamps, int k, const std::string& strategy, std::uint64_t seed) {
            std::vector<geometry::CameraView> views(timestamps.size());
            for (std::size_t i = 0; i < views.size(); ++i) views[i].timestamp = timestamps[i];
            return unproject::select_views(views, k, unproject::parse_selection(strategy), seed);
        },
        py::arg("timestamps"), py::arg("k"), py::arg("strategy") = "equidistant", py::arg("seed") = 0);

    m.def(
        "config_defaults",
        [] {
            std::map<std::string, std::string> out;
            for (const auto& e : RunConfig::schema()) out[e.key] = e.default_value;
            return out;
        },
        "Every configuration key with its default value.");

    m.def("train_and_evaluate", &train_and_evaluate, py::arg("overrides") = std::map<std::string, std::string>{},
          "Train on the synthetic train split per the config overrides and return held-out metrics.");
}
