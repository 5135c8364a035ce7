#include "skipfuse/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "skipfuse/error.hpp"

namespace skipfuse {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

const std::vector<RunConfig::Entry>& RunConfig::schema() {
    static const std::vector<Entry> entries{
        {"seed", "1", "master seed for scene generation, initialization and view sampling"},
        {"threads", "1", "worker threads for feature assignment; results do not depend on it"},

        {"synth.preset", "hard", "scene generator preset: easy | hard"},
        {"synth.scenes", "20", "number of scenes to generate"},
        {"synth.test_scenes", "6", "how many of the last scenes are held out for evaluation"},
        {"synth.cameras", "30", "cameras per scene along the trajectory"},
        {"synth.trajectory", "wall_path", "camera trajectory: wall_path | orbit"},
        {"synth.feature_dim", "16", "teacher feature dimension"},
        {"synth.noise", "0.1", "per-dimension standard deviation of teacher feature noise"},
        {"synth.density", "12", "surface sampling density, points per square meter"},
        {"synth.image_width", "80", "image width in pixels"},
        {"synth.image_height", "60", "image height in pixels"},
        {"synth.patch_size", "10", "patch size in pixels"},
        {"synth.focal", "50", "focal length in pixels"},
        {"synth.dataset_id", "0", "dataset tag written into every bundle"},

        {"grid.size", "0.1", "base voxel grid size in meters"},

        {"net.levels", "4", "encoder/decoder levels"},
        {"net.widths", "16,32,48,64", "feature width per level"},
        {"net.injection", "decoder_all", "injection point: none | pre_encoder | decoder_last | decoder_all | pre_head"},
        {"net.norm_domains", "1", "normalization slots, one per dataset"},

        {"assign.sampling", "nearest", "patch feature sampling: nearest | bilinear"},
        {"assign.multi_view", "random_one", "points seen by several views: random_one | average"},
        {"assign.occlusion", "true", "compare projected depth against the view's depth map"},
        {"assign.margin", "0.05", "occlusion margin in meters"},
        {"assign.range", "true", "keep only projections inside [assign.near, assign.far]"},
        {"assign.near", "1.0", "near end of the depth band in meters"},
        {"assign.far", "4.0", "far end of the depth band in meters"},

        {"views.train_count", "10", "images per scene during training"},
        {"views.train_strategy", "random", "training image selection: random | equidistant"},
        {"views.eval_count", "10", "images per scene during evaluation"},
        {"views.eval_strategy", "equidistant", "evaluation image selection: random | equidistant"},

        {"optim.peak_lr", "0.006", "peak learning rate"},
        {"optim.weight_decay", "0.05", "decoupled weight decay"},
        {"optim.pct_start", "0.05", "schedule position of the learning-rate peak"},
        {"optim.div_factor", "25", "start learning rate = peak / div_factor"},
        {"optim.final_div_factor", "10000", "final learning rate = start / final_div_factor"},

        {"train.mode", "inject", "regime used by sweep cells: baseline | inject | distill | finetune"},
        {"train.steps", "1000", "optimizer steps to run in this invocation"},
        {"train.total_steps", "0", "schedule length of a new phase; 0 means the phase length (train.steps, scaled by the budget when fine-tuning)"},

        {"distill.proportions", "1", "per-domain batch proportions, comma separated"},

        {"finetune.init", "scratch", "sweep cells in finetune mode start from: scratch | distill"},
        {"finetune.fraction", "1.0", "fraction of labeled training scenes used for fine-tuning"},
        {"finetune.recipe", "full", "full | reduced (trunk learning rate at 10 % of the head's)"},
        {"finetune.budget", "auto", "fine-tuning steps as a fraction of train.steps; auto: 1.0 hard, 0.1 easy"},

        {"eval.split_visible", "false", "also report mIoU on visible and invisible points"},
    };
    return entries;
}

RunConfig::RunConfig() {
    for (const auto& e : schema()) values_[e.key] = e.default_value;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    RunConfig config;
    config.merge_text(text.str(), path.string());
    return config;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string& key) const {
    const auto& s = get(key);
    int value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
    return value;
}

double RunConfig::get_double(const std::string& key) const {
    const auto& s = get(key);
    try {
        std::size_t used = 0;
        const double value = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return value;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + s + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const auto& s = get(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& item : get_list(key)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a list of integers, got '" + get(key) + "'");
        }
    }
    return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : get_list(key)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a list of numbers, got '" + get(key) + "'");
        }
    }
    return out;
}

std::string RunConfig::dump() const {
    std::ostringstream out;
    for (const auto& e : schema()) out << "# " << e.help << "\n" << e.key << " = " << values_.at(e.key) << "\n";
    return out.str();
}

}  // namespace skipfuse
