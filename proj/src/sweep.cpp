#include "skipfuse/sweep.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "skipfuse/error.hpp"
#include "skipfuse/experiment.hpp"

namespace skipfuse::sweep {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

/// Config text restricted to keys accepted by `keep`.
std::string key_of(const RunConfig& c, const std::function<bool(const std::string&)>& keep) {
    std::string out;
    for (const auto& [k, v] : c.values())
        if (keep(k)) out += k + "=" + v + "\n";
    return out;
}

bool evaluation_key(const std::string& k) { return starts_with(k, "views.eval_") || starts_with(k, "eval."); }

struct Data {
    std::vector<experiment::PreparedScene> train;
    std::vector<experiment::PreparedScene> test;
};

}  // namespace

std::size_t Grid::cell_count() const {
    std::size_t n = 1;
    for (const auto& axis : axes) n *= axis.second.size();
    return n;
}

Grid parse_grid(const std::string& text, const std::string& origin) {
    Grid g;
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
        if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto rest = trim(line.substr(eq + 1));
        if (rest.find('|') == std::string::npos) {
            g.base.set(key, rest);
            continue;
        }
        std::vector<std::string> values;
        std::istringstream parts(rest);
        std::string item;
        while (std::getline(parts, item, '|')) values.push_back(trim(item));
        for (const auto& v : values)
            if (v.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty value in axis " + key);
        g.base.get(key);  // rejects unknown keys
        for (const auto& axis : g.axes)
            if (axis.first == key) throw ConfigError(origin + ":" + std::to_string(number) + ": axis " + key + " repeated");
        g.axes.emplace_back(key, std::move(values));
    }
    return g;
}

Grid load_grid(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read sweep grid " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    return parse_grid(text.str(), path.string());
}

std::vector<RunConfig> expand(const Grid& grid) {
    std::vector<RunConfig> cells;
    const std::size_t n = grid.cell_count();
    for (std::size_t cell = 0; cell < n; ++cell) {
        RunConfig c = grid.base;
        std::size_t rest = cell;
        for (std::size_t a = grid.axes.size(); a-- > 0;) {
            const auto& [key, values] = grid.axes[a];
            c.set(key, values[rest % values.size()]);
            rest /= values.size();
        }
        cells.push_back(std::move(c));
    }
    return cells;
}

DataSource synthetic_source() {
    return [](const RunConfig& c) {
        auto bundles = experiment::synthesize(c);
        const auto split = experiment::split_indices(static_cast<int>(bundles.size()), c.get_int("synth.test_scenes"));
        std::pair<std::vector<bundle::SceneBundle>, std::vector<bundle::SceneBundle>> out;
        for (int i : split.train) out.first.push_back(bundles[static_cast<std::size_t>(i)]);
        for (int i : split.test) out.second.push_back(bundles[static_cast<std::size_t>(i)]);
        return out;
    };
}

std::vector<CellResult> run(const Grid& grid, const DataSource& source, std::ostream* progress) {
    if (grid.cell_count() == 0) throw ConfigError("sweep grid is empty");
    const auto cells = expand(grid);

    std::map<std::string, std::shared_ptr<Data>> data_cache;
    std::map<std::string, std::shared_ptr<Checkpoint>> model_cache;
    std::map<std::string, std::shared_ptr<Checkpoint>> pretrain_cache;

    std::vector<CellResult> results;
    for (std::size_t index = 0; index < cells.size(); ++index) {
        const auto& config = cells[index];
        CellResult r;
        r.config = config;
        std::size_t rest = index;
        r.values.resize(grid.axes.size());
        for (std::size_t a = grid.axes.size(); a-- > 0;) {
            r.values[a] = grid.axes[a].second[rest % grid.axes[a].second.size()];
            rest /= grid.axes[a].second.size();
        }
        const auto start = std::chrono::steady_clock::now();
        try {
            const auto settings = experiment::Settings::from(config);
            const auto mode = experiment::parse_mode(config.get("train.mode"));
            if (mode == experiment::Mode::Distill)
                throw ConfigError("sweep cells are evaluated by segmentation; use train.mode = finetune with "
                                  "finetune.init = distill");

            const auto data_key = key_of(config, [](const std::string& k) {
                return starts_with(k, "synth.") || k == "seed" || k == "grid.size" || k == "net.levels";
            });
            auto& data = data_cache[data_key];
            if (!data) {
                auto [train, test] = source(config);
                data = std::make_shared<Data>();
                for (const auto& b : train) data->train.push_back(experiment::prepare(b, settings.grid_size, settings.levels));
                for (const auto& b : test) data->test.push_back(experiment::prepare(b, settings.grid_size, settings.levels));
            }

            const auto model_key = key_of(config, [](const std::string& k) { return !evaluation_key(k); });
            auto& model = model_cache[model_key];
            if (!model) {
                std::shared_ptr<Checkpoint> ck;
                const bool from_distill = mode == experiment::Mode::Finetune && config.get("finetune.init") == "distill";
                if (config.get("finetune.init") != "distill" && config.get("finetune.init") != "scratch")
                    throw ConfigError("finetune.init must be scratch or distill");
                if (from_distill) {
                    const auto pre_key = key_of(config, [](const std::string& k) {
                        return !evaluation_key(k) && !starts_with(k, "finetune.") && k != "train.mode";
                    });
                    auto& pre = pretrain_cache[pre_key];
                    if (!pre) {
                        auto fresh = std::make_shared<Checkpoint>(experiment::init_checkpoint(
                            settings, experiment::Mode::Distill, data->train, config.dump()));
                        experiment::train(*fresh, data->train, settings, experiment::Mode::Distill, settings.steps, nullptr);
                        pre = fresh;
                    }
                    ck = std::make_shared<Checkpoint>(*pre);
                } else {
                    ck = std::make_shared<Checkpoint>(
                        experiment::init_checkpoint(settings, mode, data->train, config.dump()));
                }
                experiment::train(*ck, data->train, settings, mode, experiment::phase_steps(settings, mode, data->train),
                                  nullptr);
                model = ck;
            }
            const auto ev = experiment::evaluate(model->net, data->test, settings, settings.split_visible);
            r.miou = ev.miou;
            r.split = ev.split;
            r.coverage = ev.coverage;
            r.ok = true;
        } catch (const Error& e) {
            r.error = e.what();
        } catch (const std::exception& e) {
            r.error = std::string("unexpected failure: ") + e.what();
        }
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (progress) {
            *progress << "cell " << index + 1 << "/" << cells.size();
            for (std::size_t a = 0; a < grid.axes.size(); ++a) *progress << " " << grid.axes[a].first << "=" << r.values[a];
            if (r.ok) {
                char buf[64];
                std::snprintf(buf, sizeof buf, " miou=%.4f", r.miou.mean);
                *progress << buf << "\n";
            } else {
                *progress << " failed: " << r.error << "\n";
            }
        }
        results.push_back(std::move(r));
    }
    return results;
}

std::string format_table(const Grid& grid, const std::vector<CellResult>& results) {
    std::vector<std::string> header;
    for (const auto& axis : grid.axes) header.push_back(axis.first);
    header.insert(header.end(), {"mIoU", "coverage"});
    const bool split = std::any_of(results.begin(), results.end(), [](const CellResult& r) { return r.split.has_value(); });
    if (split) header.insert(header.end(), {"visible", "invisible"});

    std::vector<std::vector<std::string>> rows;
    for (const auto& r : results) {
        std::vector<std::string> row = r.values;
        char buf[32];
        if (r.ok) {
            std::snprintf(buf, sizeof buf, "%.2f", 100.0 * r.miou.mean);
            row.emplace_back(buf);
            std::snprintf(buf, sizeof buf, "%.3f", r.coverage);
            row.emplace_back(buf);
            if (split) {
                for (const auto* m : {r.split && r.split->visible ? &*r.split->visible : nullptr,
                                      r.split && r.split->invisible ? &*r.split->invisible : nullptr}) {
                    if (m) {
                        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * m->mean);
                        row.emplace_back(buf);
                    } else {
                        row.emplace_back("-");
                    }
                }
            }
        } else {
            row.emplace_back("error: " + r.error);
        }
        rows.push_back(std::move(row));
    }

    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c)
            if (c + 1 < row.size() || row.size() == header.size()) width[c] = std::max(width[c], row[c].size());

    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << row[c];
            if (c + 1 < row.size()) out << std::string(width[c] - std::min(width[c], row[c].size()) + 2, ' ');
        }
        out << "\n";
    };
    emit(header);
    for (const auto& row : rows) emit(row);
    return out.str();
}

std::string to_jsonl(const Grid& grid, const std::vector<CellResult>& results, bool include_wall_time) {
    using nlohmann::ordered_json;
    std::string out;
    auto miou_json = [](const eval::MiouResult& m) {
        ordered_json per_class = ordered_json::array();
        for (const auto& v : m.per_class) per_class.push_back(v ? ordered_json(*v) : ordered_json(nullptr));
        return ordered_json{{"mean", m.mean}, {"per_class", per_class}, {"classes_counted", m.counted}};
    };
    for (const auto& r : results) {
        ordered_json j;
        ordered_json cell = ordered_json::object();
        for (std::size_t a = 0; a < grid.axes.size(); ++a) cell[grid.axes[a].first] = r.values[a];
        j["cell"] = cell;
        j["seed"] = r.config.get("seed");
        j["status"] = r.ok ? "ok" : "error";
        if (r.ok) {
            j["miou"] = r.miou.mean;
            j["per_class_iou"] = miou_json(r.miou)["per_class"];
            j["coverage"] = r.coverage;
            if (r.split) {
                j["visible"] = r.split->visible ? miou_json(*r.split->visible) : ordered_json(nullptr);
                j["invisible"] = r.split->invisible ? miou_json(*r.split->invisible) : ordered_json(nullptr);
            }
        } else {
            j["error"] = r.error;
        }
        ordered_json config = ordered_json::object();
        for (const auto& [k, v] : r.config.values()) config[k] = v;
        j["config"] = config;
        if (include_wall_time) j["wall_time"] = r.wall_time;
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace skipfuse::sweep
