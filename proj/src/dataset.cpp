#include "skipfuse/dataset.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "skipfuse/error.hpp"
#include "skipfuse/experiment.hpp"

namespace skipfuse::dataset {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

ordered_json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

}  // namespace

Which parse_which(const std::string& name) {
    if (name == "train") return Which::Train;
    if (name == "test") return Which::Test;
    if (name == "all") return Which::All;
    throw ConfigError("unknown split '" + name + "' (expected train, test or all)");
}

std::uint64_t write_collection(const fs::path& dir, std::span<const bundle::SceneBundle> bundles,
                               const RunConfig& config) {
    fs::create_directories(dir);
    const auto split = experiment::split_indices(static_cast<int>(bundles.size()), config.get_int("synth.test_scenes"));
    std::vector<std::string> role(bundles.size(), "train");
    for (int i : split.test) role[static_cast<std::size_t>(i)] = "test";

    ordered_json manifest;
    manifest["schema_version"] = bundle::kSchemaVersion;
    manifest["preset"] = config.get("synth.preset");
    manifest["seed"] = config.get("seed");
    manifest["scene_count"] = bundles.size();
    ordered_json train = ordered_json::array(), test = ordered_json::array(), scenes = ordered_json::array();
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        const auto& b = bundles[i];
        bundle::write_bundle(dir / b.name, b);
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir / b.name))
            if (entry.is_regular_file()) files.push_back(entry.path().filename().string());
        std::sort(files.begin(), files.end());
        ordered_json hashes = ordered_json::object();
        for (const auto& f : files) hashes[f] = bundle::hex(bundle::file_hash(dir / b.name / f));
        scenes.push_back({{"name", b.name}, {"split", role[i]}, {"files", hashes}});
        (role[i] == "train" ? train : test).push_back(b.name);
    }
    manifest["train"] = train;
    manifest["test"] = test;
    manifest["scenes"] = scenes;
    ordered_json echo = ordered_json::object();
    for (const auto& [k, v] : config.values())
        if (k.rfind("synth.", 0) == 0 || k == "seed") echo[k] = v;
    manifest["config"] = echo;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    return bundle::file_hash(dir / "manifest.json");
}

std::vector<bundle::SceneBundle> load(std::span<const fs::path> dirs, Which which) {
    std::vector<bundle::SceneBundle> out;
    for (const auto& dir : dirs) {
        if (fs::exists(dir / "manifest.json")) {
            const auto manifest = read_json(dir / "manifest.json");
            if (!manifest.contains("scenes") || !manifest["scenes"].is_array())
                throw DataError((dir / "manifest.json").string() + ": missing scene list");
            for (const auto& scene : manifest["scenes"]) {
                const auto role = scene.value("split", std::string("train"));
                if (which == Which::Train && role != "train") continue;
                if (which == Which::Test && role != "test") continue;
                out.push_back(bundle::read_bundle(dir / scene.at("name").get<std::string>()));
            }
        } else if (fs::exists(dir / "meta.json")) {
            out.push_back(bundle::read_bundle(dir));
        } else {
            throw DataError(dir.string() + ": neither a scene bundle nor a synth output directory");
        }
    }
    return out;
}

void write_projection(const fs::path& prefix, const ProjectionDump& dump, const std::string& policy_echo) {
    const auto m = static_cast<std::size_t>(dump.features.rows());
    const auto base = prefix.string();
    bundle::write_f32(base + ".points.bin", std::span<const double>(dump.positions.data(), m * 3));
    bundle::write_f32(base + ".features.bin",
                      std::span<const double>(dump.features.data(), static_cast<std::size_t>(dump.features.size())));
    bundle::write_i32(base + ".source.bin", dump.source_view);
    ordered_json side;
    side["rows"] = m;
    side["dim"] = dump.features.cols();
    side["coverage"] = dump.coverage;
    side["visible"] = std::count_if(dump.source_view.begin(), dump.source_view.end(), [](int v) { return v >= 0; });
    side["selected_views"] = dump.selected_views;
    side["policy"] = policy_echo;
    write_text(base + ".json", side.dump(2) + "\n");
}

ProjectionDump read_projection(const fs::path& prefix) {
    const auto base = prefix.string();
    const auto side = read_json(base + ".json");
    ProjectionDump d;
    const auto rows = side.at("rows").get<std::size_t>();
    const auto dim = side.at("dim").get<std::size_t>();
    const auto points = bundle::read_f32(base + ".points.bin", rows * 3);
    const auto features = bundle::read_f32(base + ".features.bin", rows * dim);
    d.positions = Eigen::Map<const Matrix>(points.data(), static_cast<Eigen::Index>(rows), 3);
    d.features = Eigen::Map<const Matrix>(features.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    d.source_view = bundle::read_i32(base + ".source.bin", rows);
    d.selected_views = side.at("selected_views").get<std::vector<int>>();
    d.coverage = side.at("coverage").get<double>();
    return d;
}

}  // namespace skipfuse::dataset
