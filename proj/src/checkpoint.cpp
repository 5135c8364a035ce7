#include "skipfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "skipfuse/error.hpp"

namespace skipfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'K', 'F', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

json net_config_json(const net::NetConfig& c) {
    return json{{"levels", c.levels},
                {"widths", c.widths},
                {"input_dim", c.input_dim},
                {"feature_dim_2d", c.feature_dim_2d},
                {"num_classes", c.num_classes},
                {"injection", net::to_string(c.injection)},
                {"head", net::to_string(c.head)},
                {"norm_domains", c.norm_domains},
                {"activation", c.activation == net::Activation::Gelu ? "gelu" : "identity"},
                {"init_seed", std::to_string(c.init_seed)}};
}

net::NetConfig net_config_from(const json& j) {
    net::NetConfig c;
    c.levels = j.at("levels").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.input_dim = j.at("input_dim").get<int>();
    c.feature_dim_2d = j.at("feature_dim_2d").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.injection = net::parse_injection(j.at("injection").get<std::string>());
    c.head = net::parse_head(j.at("head").get<std::string>());
    c.norm_domains = j.at("norm_domains").get<int>();
    c.activation = j.at("activation").get<std::string>() == "gelu" ? net::Activation::Gelu : net::Activation::Identity;
    c.init_seed = std::stoull(j.at("init_seed").get<std::string>());
    return c;
}

/// Visits every persisted array in a fixed order.
template <typename NetT, typename OptT, typename Fn>
void for_each_array(NetT& net, OptT& optimizer, Fn&& fn) {
    auto& params = net.parameters();
    for (auto& p : params) fn("param/" + p.name, p.value);
    auto& stats = net.statistics();
    for (std::size_t u = 0; u < stats.size(); ++u)
        for (std::size_t d = 0; d < stats[u].size(); ++d) {
            const std::string base = "stats/" + std::to_string(u) + "/d" + std::to_string(d);
            fn(base + "/mean", stats[u][d].mean);
            fn(base + "/var", stats[u][d].var);
        }
    for (std::size_t i = 0; i < optimizer.first_moment.size(); ++i) {
        fn("adam_m/" + params[i].name, optimizer.first_moment[i]);
        fn("adam_v/" + params[i].name, optimizer.second_moment[i]);
    }
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
    json header;
    header["net"] = net_config_json(checkpoint.net.config());
    header["trainer"] = {{"mode", checkpoint.trainer.mode},
                         {"step", checkpoint.trainer.step},
                         {"total_steps", checkpoint.trainer.total_steps},
                         {"skipped", checkpoint.trainer.skipped}};
    header["optimizer_step"] = checkpoint.optimizer.step;
    header["optimizer_slots"] = checkpoint.optimizer.first_moment.size();
    json rng = json::array();
    for (auto word : checkpoint.net.init_rng().state()) rng.push_back(std::to_string(word));
    header["init_rng"] = rng;
    header["config"] = checkpoint.config_echo;
    header["version_note"] = "float64 little-endian arrays follow in directory order";

    json directory = json::array();
    std::vector<double> payload;
    for_each_array(checkpoint.net, checkpoint.optimizer, [&](const std::string& name, const auto& m) {
        directory.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        payload.insert(payload.end(), m.data(), m.data() + m.size());
    });
    header["arrays"] = directory;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path.string() + ": not a checkpoint");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != kCheckpointVersion)
        throw DataError(path.string() + ": checkpoint version " + std::to_string(version) + " is not supported");
    std::uint64_t length = 0;
    in.read(reinterpret_cast<char*>(&length), sizeof length);
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (!in) throw DataError(path.string() + ": truncated header");

    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    Checkpoint ck{net::ToyNet(net_config_from(header.at("net"))), {}, {}, header.value("config", std::string())};
    const auto& t = header.at("trainer");
    ck.trainer.mode = t.at("mode").get<std::string>();
    ck.trainer.step = t.at("step").get<std::int64_t>();
    ck.trainer.total_steps = t.at("total_steps").get<std::int64_t>();
    ck.trainer.skipped = t.value("skipped", std::int64_t{0});
    ck.optimizer.step = header.at("optimizer_step").get<std::int64_t>();
    const auto slots = header.at("optimizer_slots").get<std::size_t>();
    const auto& params = ck.net.parameters();
    if (slots != 0 && slots != params.size()) throw DataError(path.string() + ": optimizer state does not match the network");
    for (std::size_t i = 0; i < slots; ++i) {
        ck.optimizer.first_moment.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
        ck.optimizer.second_moment.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
    }
    Rng::State state{};
    const auto& rng = header.at("init_rng");
    for (std::size_t i = 0; i < state.size(); ++i) state[i] = std::stoull(rng.at(i).get<std::string>());
    ck.net.init_rng().set_state(state);

    const auto& directory = header.at("arrays");
    std::size_t index = 0;
    for_each_array(ck.net, ck.optimizer, [&](const std::string& name, auto& m) {
        if (index >= directory.size()) throw DataError(path.string() + ": array directory is too short");
        const auto& entry = directory[index++];
        if (entry.at("name").get<std::string>() != name || entry.at("rows").get<Eigen::Index>() != m.rows() ||
            entry.at("cols").get<Eigen::Index>() != m.cols())
            throw DataError(path.string() + ": array '" + entry.at("name").get<std::string>() + "' does not match '" + name + "'");
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!in) throw DataError(path.string() + ": truncated array " + name);
    });
    if (index != directory.size()) throw DataError(path.string() + ": unexpected extra arrays");
    return ck;
}

}  // namespace skipfuse
