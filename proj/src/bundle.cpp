#include "skipfuse/bundle.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "skipfuse/error.hpp"

namespace skipfuse::bundle {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return value;
}

std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

template <typename T>
T field(const json& j, const char* key, const fs::path& file) {
    if (!j.contains(key)) throw DataError(file.string() + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(file.string() + ": field '" + key + "': " + e.what());
    }
}

}  // namespace

void write_f32(const fs::path& path, std::span<const double> values) {
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto word = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
        std::memcpy(bytes.data() + i * 4, &word, 4);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_i32(const fs::path& path, std::span<const int> values) {
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto word = to_little(static_cast<std::int32_t>(values[i]));
        std::memcpy(bytes.data() + i * 4, &word, 4);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> read_f32(const fs::path& path, std::size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count * 4)
        throw DataError(path.string() + ": expected " + std::to_string(expected_count * 4) + " bytes, found " +
                        std::to_string(bytes.size()));
    std::vector<double> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        std::uint32_t word;
        std::memcpy(&word, bytes.data() + i * 4, 4);
        out[i] = std::bit_cast<float>(to_little(word));
    }
    return out;
}

std::vector<int> read_i32(const fs::path& path, std::size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count * 4)
        throw DataError(path.string() + ": expected " + std::to_string(expected_count * 4) + " bytes, found " +
                        std::to_string(bytes.size()));
    std::vector<int> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        std::int32_t word;
        std::memcpy(&word, bytes.data() + i * 4, 4);
        out[i] = to_little(word);
    }
    return out;
}

std::uint64_t file_hash(const fs::path& path) {
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : read_bytes(path)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex(std::uint64_t value) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << value;
    return out.str();
}

SceneBundle from_scene(const synth::Scene& scene, std::string name, std::string preset) {
    SceneBundle b;
    b.name = std::move(name);
    b.preset = std::move(preset);
    b.cloud = scene.cloud;
    b.class_names = scene.class_names;
    b.views = scene.views;
    b.features = scene.features;
    // Match what a write/read round trip yields, so in-memory and on-disk
    // runs see identical inputs.
    auto to_f32 = [](double& x) { x = static_cast<double>(static_cast<float>(x)); };
    for (Eigen::Index i = 0; i < b.cloud.positions.size(); ++i) to_f32(b.cloud.positions.data()[i]);
    if (b.cloud.colors)
        for (Eigen::Index i = 0; i < b.cloud.colors->size(); ++i) to_f32(b.cloud.colors->data()[i]);
    for (auto& view : b.views)
        if (view.depth)
            for (auto& d : view.depth->values) to_f32(d);
    for (auto& map : b.features->maps)
        for (auto& x : map.data) to_f32(x);
    return b;
}

void write_bundle(const fs::path& dir, const SceneBundle& bundle) {
    fs::create_directories(dir);
    const auto& cloud = bundle.cloud;
    const auto n = static_cast<std::size_t>(cloud.size());

    json meta;
    meta["schema_version"] = kSchemaVersion;
    meta["name"] = bundle.name;
    meta["preset"] = bundle.preset;
    meta["point_count"] = n;
    meta["class_names"] = bundle.class_names;
    meta["dataset_id"] = cloud.dataset_id;
    meta["has_colors"] = cloud.colors.has_value();
    meta["view_count"] = bundle.views.size();
    meta["feature_dim"] = bundle.features ? bundle.features->feature_dim : 0;
    write_text(dir / "meta.json", meta.dump(2) + "\n");

    write_f32(dir / "points.bin", std::span<const double>(cloud.positions.data(), n * 3));
    std::vector<int> labels = cloud.labels ? *cloud.labels : std::vector<int>(n, kIgnoreLabel);
    write_i32(dir / "labels.bin", labels);
    if (cloud.colors) write_f32(dir / "colors.bin", std::span<const double>(cloud.colors->data(), n * 3));

    json cameras = json::array();
    for (std::size_t k = 0; k < bundle.views.size(); ++k) {
        const auto& v = bundle.views[k];
        json c;
        c["name"] = v.name;
        std::vector<double> intrinsics(9);
        std::vector<double> extrinsics(16);
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) intrinsics[static_cast<std::size_t>(r * 3 + col)] = v.intrinsics(r, col);
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col) extrinsics[static_cast<std::size_t>(r * 4 + col)] = v.extrinsics(r, col);
        c["intrinsics"] = intrinsics;
        c["extrinsics"] = extrinsics;
        c["width"] = v.width;
        c["height"] = v.height;
        c["patch_size"] = v.patch_size;
        c["timestamp"] = v.timestamp;
        if (v.depth) {
            const std::string file = "depth_" + std::to_string(k) + ".bin";
            c["depth_file"] = file;
            write_f32(dir / file, v.depth->values);
        } else {
            c["depth_file"] = nullptr;
        }
        cameras.push_back(c);
    }
    write_text(dir / "cameras.json", cameras.dump(2) + "\n");

    if (bundle.features) {
        for (std::size_t k = 0; k < bundle.features->maps.size(); ++k) {
            const auto& m = bundle.features->maps[k];
            write_f32(dir / ("feat_" + std::to_string(k) + ".bin"), m.data);
            json side{{"rows", m.rows}, {"cols", m.cols}, {"dim", m.dim}};
            write_text(dir / ("feat_" + std::to_string(k) + ".json"), side.dump(2) + "\n");
        }
    }
}

SceneBundle read_bundle(const fs::path& dir) {
    const auto meta_path = dir / "meta.json";
    const json meta = read_json(meta_path);
    const int version = field<int>(meta, "schema_version", meta_path);
    if (version != kSchemaVersion)
        throw DataError(meta_path.string() + ": schema version " + std::to_string(version) + " is not supported");

    SceneBundle b;
    b.name = meta.value("name", dir.filename().string());
    b.preset = meta.value("preset", std::string());
    b.class_names = field<std::vector<std::string>>(meta, "class_names", meta_path);
    const auto n = field<std::size_t>(meta, "point_count", meta_path);
    b.cloud.dataset_id = field<int>(meta, "dataset_id", meta_path);

    const auto pts = read_f32(dir / "points.bin", n * 3);
    b.cloud.positions = Eigen::Map<const Matrix>(pts.data(), static_cast<Eigen::Index>(n), 3);
    b.cloud.labels = read_i32(dir / "labels.bin", n);
    if (meta.value("has_colors", false)) {
        const auto colors = read_f32(dir / "colors.bin", n * 3);
        b.cloud.colors = Matrix(Eigen::Map<const Matrix>(colors.data(), static_cast<Eigen::Index>(n), 3));
    }
    try {
        cloud::validate(b.cloud, b.num_classes());
    } catch (const Error& e) {
        throw DataError(dir.string() + ": " + e.what());
    }

    const auto cameras_path = dir / "cameras.json";
    const json cameras = read_json(cameras_path);
    if (!cameras.is_array()) throw DataError(cameras_path.string() + ": expected an array");
    for (std::size_t k = 0; k < cameras.size(); ++k) {
        const auto& c = cameras[k];
        geometry::CameraView v;
        v.name = c.value("name", "view" + std::to_string(k));
        const auto intrinsics = field<std::vector<double>>(c, "intrinsics", cameras_path);
        const auto extrinsics = field<std::vector<double>>(c, "extrinsics", cameras_path);
        if (intrinsics.size() != 9 || extrinsics.size() != 16)
            throw DataError(cameras_path.string() + ": camera " + std::to_string(k) + " needs 9 intrinsics and 16 extrinsics");
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col) v.intrinsics(r, col) = intrinsics[static_cast<std::size_t>(r * 3 + col)];
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 4; ++col) v.extrinsics(r, col) = extrinsics[static_cast<std::size_t>(r * 4 + col)];
        v.width = field<int>(c, "width", cameras_path);
        v.height = field<int>(c, "height", cameras_path);
        v.patch_size = field<int>(c, "patch_size", cameras_path);
        v.timestamp = field<double>(c, "timestamp", cameras_path);
        if (c.contains("depth_file") && !c["depth_file"].is_null()) {
            const auto values = read_f32(dir / c["depth_file"].get<std::string>(),
                                         static_cast<std::size_t>(v.width) * v.height);
            geometry::DepthMap map(v.width, v.height);
            map.values = values;
            v.depth = std::move(map);
        }
        try {
            geometry::validate(v);
        } catch (const Error& e) {
            throw DataError(cameras_path.string() + ": " + e.what());
        }
        b.views.push_back(std::move(v));
    }

    unproject::FeatureMapSet features;
    features.feature_dim = meta.value("feature_dim", 0);
    for (std::size_t k = 0; k < b.views.size(); ++k) {
        const auto bin = dir / ("feat_" + std::to_string(k) + ".bin");
        const auto side_path = dir / ("feat_" + std::to_string(k) + ".json");
        if (!fs::exists(bin) || !fs::exists(side_path)) {
            b.missing_features = (fs::exists(bin) ? side_path : bin).string();
            break;
        }
        const json side = read_json(side_path);
        unproject::FeatureMap m(field<int>(side, "rows", side_path), field<int>(side, "cols", side_path),
                                field<int>(side, "dim", side_path));
        m.data = read_f32(bin, m.data.size());
        if (features.feature_dim == 0) features.feature_dim = m.dim;
        features.maps.push_back(std::move(m));
    }
    if (b.missing_features.empty() && !b.views.empty()) {
        try {
            unproject::validate(features, b.views);
        } catch (const Error& e) {
            throw DataError(dir.string() + ": " + e.what());
        }
        b.features = std::move(features);
    } else if (b.views.empty()) {
        b.features = std::move(features);
    }
    return b;
}

const unproject::FeatureMapSet& require_features(const SceneBundle& bundle) {
    if (!bundle.features)
        throw DataError("bundle '" + bundle.name + "' has no image features (missing " + bundle.missing_features + ")");
    return *bundle.features;
}

}  // namespace skipfuse::bundle
