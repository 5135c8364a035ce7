// skipfuse command-line interface: synth, project, train, eval, sweep.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "skipfuse/checkpoint.hpp"
#include "skipfuse/config.hpp"
#include "skipfuse/dataset.hpp"
#include "skipfuse/error.hpp"
#include "skipfuse/evalkit.hpp"
#include "skipfuse/experiment.hpp"
#include "skipfuse/sweep.hpp"

namespace fs = std::filesystem;
using namespace skipfuse;
using nlohmann::ordered_json;

namespace {

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    int threads = 0;

    RunConfig load() const {
        RunConfig c = config_file.empty() ? RunConfig() : RunConfig::from_file(config_file);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            c.merge_text(kv, "--set");
        }
        if (threads > 0) c.set("threads", std::to_string(threads));
        return c;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("--config", common.config_file, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", common.overrides, "override one config key (key=value), repeatable");
    cmd->add_option("--threads", common.threads, "worker threads (results do not depend on it)");
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::vector<experiment::PreparedScene> prepare_all(const std::vector<bundle::SceneBundle>& bundles,
                                                   const experiment::Settings& s) {
    std::vector<experiment::PreparedScene> out;
    for (const auto& b : bundles) out.push_back(experiment::prepare(b, s.grid_size, s.levels));
    return out;
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

ordered_json miou_json(const eval::MiouResult& m, const std::vector<std::string>& names) {
    ordered_json per = ordered_json::object();
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        const auto key = c < names.size() ? names[c] : std::to_string(c);
        per[key] = m.per_class[c] ? ordered_json(*m.per_class[c]) : ordered_json(nullptr);
    }
    return ordered_json{{"miou", m.mean}, {"classes_counted", m.counted}, {"per_class_iou", per}};
}

int cmd_synth(const Common& common, const std::string& out_dir) {
    const auto config = common.load();
    const auto bundles = experiment::synthesize(config);
    const auto hash = dataset::write_collection(out_dir, bundles, config);
    std::cout << "wrote " << bundles.size() << " scenes to " << out_dir << " (manifest " << bundle::hex(hash) << ")\n";
    return 0;
}

struct ProjectArgs {
    std::string bundle_dir;
    std::string out;
    std::optional<int> views;
    std::optional<std::string> strategy;
    std::optional<std::string> sampling;
    std::optional<std::string> multi_view;
    std::optional<std::uint64_t> seed;
};

int cmd_project(const Common& common, const ProjectArgs& a) {
    auto config = common.load();
    if (a.views) config.set("views.eval_count", std::to_string(*a.views));
    if (a.strategy) config.set("views.eval_strategy", *a.strategy);
    if (a.sampling) config.set("assign.sampling", *a.sampling);
    if (a.multi_view) config.set("assign.multi_view", *a.multi_view);
    if (a.seed) config.set("seed", std::to_string(*a.seed));
    const auto settings = experiment::Settings::from(config);
    const auto scene = experiment::prepare(bundle::read_bundle(a.bundle_dir), settings.grid_size, settings.levels);

    const std::uint64_t key = derive_seed(settings.seed, 0x9e07);
    const auto assignment = experiment::scene_features(scene, settings.eval_views, settings.assign, key);
    dataset::ProjectionDump dump;
    dump.positions = scene.voxelized.positions;
    dump.features = assignment.features;
    dump.source_view = assignment.source_view;
    dump.selected_views = unproject::select_views(scene.views, settings.eval_views.count, settings.eval_views.strategy,
                                                  derive_seed(key, 1));
    dump.coverage = unproject::coverage_fraction(assignment, scene.voxel_labels);

    std::ostringstream policy;
    policy << "views=" << settings.eval_views.count << " strategy=" << unproject::to_string(settings.eval_views.strategy)
           << " sampling=" << unproject::to_string(settings.assign.sampling)
           << " multi_view=" << unproject::to_string(settings.assign.multi_view) << " seed=" << settings.seed;
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    dataset::write_projection(a.out, dump, policy.str());
    std::cout << scene.name << ": " << assignment.visible_set.size() << " of " << assignment.size()
              << " voxels visible, coverage " << fmt("%.4f", dump.coverage) << "\n";
    return 0;
}

struct TrainArgs {
    std::string mode;
    std::vector<std::string> data;
    std::string split = "train";
    std::string in;
    std::string out;
    std::optional<std::int64_t> steps;
    std::string log;
};

int cmd_train(const Common& common, const TrainArgs& a) {
    const auto config = common.load();
    const auto settings = experiment::Settings::from(config);
    const auto mode = experiment::parse_mode(a.mode);

    if (a.steps && *a.steps == 0 && !a.in.empty()) {
        load_checkpoint(a.in);  // validates the input
        if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
        fs::copy_file(a.in, a.out, fs::copy_options::overwrite_existing);
        std::cout << "copied " << a.in << " to " << a.out << "\n";
        return 0;
    }

    std::vector<fs::path> dirs(a.data.begin(), a.data.end());
    const auto scenes = prepare_all(dataset::load(dirs, dataset::parse_which(a.split)), settings);
    if (scenes.empty()) throw InputError("no scenes selected for training");

    Checkpoint ck = a.in.empty() ? experiment::init_checkpoint(settings, mode, scenes, config.dump()) : load_checkpoint(a.in);
    ck.config_echo = config.dump();

    std::int64_t steps = 0;
    if (a.steps) {
        steps = *a.steps;
    } else if (ck.trainer.mode == experiment::to_string(mode) && ck.trainer.step < ck.trainer.total_steps) {
        steps = ck.trainer.total_steps - ck.trainer.step;
    } else {
        steps = experiment::phase_steps(settings, mode, scenes);
    }
    if (steps < 0) throw ConfigError("--steps must be nonnegative");

    std::ofstream log_file;
    std::ostream* log = &std::cout;
    if (!a.log.empty()) {
        if (fs::path(a.log).has_parent_path()) fs::create_directories(fs::path(a.log).parent_path());
        log_file.open(a.log, std::ios::binary);
        if (!log_file) throw DataError("cannot write " + a.log);
        log = &log_file;
    }
    const auto report = experiment::train(ck, scenes, settings, mode, steps, log);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    save_checkpoint(a.out, ck);
    std::cerr << experiment::to_string(mode) << ": ran " << report.steps_run << " steps (now at "
              << ck.trainer.step << "/" << ck.trainer.total_steps << ")";
    if (report.skipped > 0) std::cerr << ", skipped " << report.skipped << " batches without visible points";
    std::cerr << "\n";
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::vector<std::string> data;
    std::string split = "test";
    bool split_visible = false;
    std::string pca_out;
    std::string metrics_out;
};

int cmd_eval(const Common& common, const EvalArgs& a) {
    auto config = common.load();
    if (a.split_visible) config.set("eval.split_visible", "true");
    const auto settings = experiment::Settings::from(config);
    const auto ck = load_checkpoint(a.checkpoint);
    std::vector<fs::path> dirs(a.data.begin(), a.data.end());
    const auto bundles = dataset::load(dirs, dataset::parse_which(a.split));
    const auto scenes = prepare_all(bundles, settings);
    if (scenes.empty()) throw InputError("no scenes selected for evaluation");
    const auto& names = bundles.front().class_names;

    ordered_json metrics;
    metrics["checkpoint_mode"] = ck.trainer.mode;
    metrics["checkpoint_step"] = ck.trainer.step;
    metrics["scenes"] = scenes.size();
    std::ostringstream table;

    if (ck.net.config().head == net::Head::Segmentation) {
        const auto ev = experiment::evaluate(ck.net, scenes, settings, settings.split_visible);
        metrics["segmentation"] = miou_json(ev.miou, names);
        metrics["coverage"] = ev.coverage;
        std::size_t width = 5;
        for (const auto& n : names) width = std::max(width, n.size());
        table << std::string("class") + std::string(width - 5 + 2, ' ') << "IoU\n";
        for (std::size_t c = 0; c < ev.miou.per_class.size(); ++c) {
            const auto& n = c < names.size() ? names[c] : std::to_string(c);
            table << n << std::string(width - n.size() + 2, ' ')
                  << (ev.miou.per_class[c] ? fmt("%.2f", 100.0 * *ev.miou.per_class[c]) : std::string("-")) << "\n";
        }
        table << "mIoU" << std::string(width - 4 + 2, ' ') << fmt("%.2f", 100.0 * ev.miou.mean) << "\n";
        table << "coverage" << std::string(width > 8 ? width - 8 + 2 : 2, ' ') << fmt("%.4f", ev.coverage) << "\n";
        if (ev.split) {
            for (const auto& [label, part] : {std::pair{"visible", &ev.split->visible}, std::pair{"invisible", &ev.split->invisible}}) {
                metrics[label] = *part ? miou_json(**part, names) : ordered_json(nullptr);
                table << label << std::string(width > std::string(label).size() ? width - std::string(label).size() + 2 : 2, ' ')
                      << (*part ? fmt("%.2f", 100.0 * (*part)->mean) : std::string("undefined")) << "\n";
            }
        }
    } else {
        std::optional<Matrix> prototypes;
        const auto& b = bundles.front();
        if (!b.preset.empty() && b.features) {
            auto spec = synth::preset_spec(synth::parse_preset(b.preset), 0);
            prototypes = synth::make_prototypes(static_cast<int>(b.class_names.size()), b.features->feature_dim,
                                                spec.prototype_seed);
        }
        const auto ev = experiment::evaluate_distill(ck.net, scenes, settings, prototypes ? &*prototypes : nullptr);
        metrics["cosine_loss"] = ev.cosine_loss;
        table << "cosine loss  " << fmt("%.4f", ev.cosine_loss) << "\n";
        if (prototypes) {
            metrics["prototype_similarity"] = {{"within", ev.separation.within},
                                               {"cross", ev.separation.cross},
                                               {"gap", ev.separation.gap()}};
            table << "within-class " << fmt("%.4f", ev.separation.within) << "\n"
                  << "cross-class  " << fmt("%.4f", ev.separation.cross) << "\n";
        }
    }
    std::cout << table.str();

    if (!a.metrics_out.empty()) write_file(a.metrics_out, metrics.dump(2) + "\n");
    if (!a.pca_out.empty()) {
        std::string text;
        for (std::size_t k = 0; k < scenes.size(); ++k) {
            const auto out = experiment::predict(ck.net, scenes[k], settings, static_cast<int>(k));
            const Matrix rgb = eval::pca_rgb(out.features);
            const auto& p = scenes[k].voxelized.positions;
            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                char line[160];
                std::snprintf(line, sizeof line, "%.6f %.6f %.6f %.6f %.6f %.6f\n", p(i, 0), p(i, 1), p(i, 2), rgb(i, 0),
                              rgb(i, 1), rgb(i, 2));
                text += line;
            }
        }
        write_file(a.pca_out, text);
    }
    return 0;
}

struct SweepArgs {
    std::string grid;
    std::string out;
    std::string table;
    std::vector<std::string> data;
};

int cmd_sweep(const Common& common, const SweepArgs& a) {
    auto grid = sweep::load_grid(a.grid);
    if (!common.config_file.empty() || !common.overrides.empty() || common.threads > 0) {
        // Flags apply on top of the grid's base settings.
        auto base = common.load();
        for (const auto& [k, v] : base.values())
            if (v != RunConfig().get(k)) grid.base.set(k, v);
    }
    sweep::DataSource source = sweep::synthetic_source();
    if (!a.data.empty()) {
        std::vector<fs::path> dirs(a.data.begin(), a.data.end());
        source = [dirs](const RunConfig&) {
            return std::pair{dataset::load(dirs, dataset::Which::Train), dataset::load(dirs, dataset::Which::Test)};
        };
    }
    const auto results = sweep::run(grid, source, &std::cerr);
    const auto table = sweep::format_table(grid, results);
    std::cout << table;
    write_file(a.out, sweep::to_jsonl(grid, results));
    if (!a.table.empty()) write_file(a.table, table);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"skipfuse: image-feature injection and distillation for point-cloud segmentation"};
    app.require_subcommand(1);

    Common common;

    auto* synth = app.add_subcommand("synth", "generate synthetic scene bundles");
    add_common(synth, common);
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* project = app.add_subcommand("project", "unproject image features onto a bundle's voxels");
    add_common(project, common);
    ProjectArgs pa;
    project->add_option("--bundle", pa.bundle_dir, "scene bundle directory")->required()->check(CLI::ExistingDirectory);
    project->add_option("--out", pa.out, "output prefix")->required();
    project->add_option("--views", pa.views, "number of views to use");
    project->add_option("--strategy", pa.strategy, "view selection: random | equidistant (eqdist)");
    project->add_option("--sampling", pa.sampling, "nearest | bilinear");
    project->add_option("--multi-view", pa.multi_view, "random_one | average");
    project->add_option("--seed", pa.seed, "seed for view selection and per-point draws");

    auto* train = app.add_subcommand("train", "train or continue a checkpoint");
    add_common(train, common);
    TrainArgs ta;
    train->add_option("--mode", ta.mode, "baseline | inject | distill | finetune")->required();
    train->add_option("--data", ta.data, "synth output or bundle directory, repeatable")->required();
    train->add_option("--split", ta.split, "train | test | all");
    train->add_option("--in", ta.in, "checkpoint to start from")->check(CLI::ExistingFile);
    train->add_option("--out", ta.out, "checkpoint to write")->required();
    train->add_option("--steps", ta.steps, "steps to run (default: the rest of the phase)");
    train->add_option("--log", ta.log, "training log file (default: stdout)");

    auto* evaluate = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(evaluate, common);
    EvalArgs ea;
    evaluate->add_option("--ckpt", ea.checkpoint, "checkpoint")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--data", ea.data, "synth output or bundle directory, repeatable")->required();
    evaluate->add_option("--split", ea.split, "train | test | all");
    evaluate->add_flag("--split-visible", ea.split_visible, "report mIoU on visible and invisible points");
    evaluate->add_option("--pca-out", ea.pca_out, "write 'x y z r g b' lines of per-scene PCA colors");
    evaluate->add_option("--metrics-out", ea.metrics_out, "write metrics as JSON");

    auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate every cell of a grid");
    add_common(sweep_cmd, common);
    SweepArgs sa;
    sweep_cmd->add_option("--grid", sa.grid, "grid file ('key = a | b' lines)")->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--out", sa.out, "results file (JSON lines)")->required();
    sweep_cmd->add_option("--table", sa.table, "also write the text table here");
    sweep_cmd->add_option("--data", sa.data, "use these bundles instead of synthesizing");

    auto* defaults = app.add_subcommand("defaults", "print every config key with its default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth) return cmd_synth(common, synth_out);
        if (*project) return cmd_project(common, pa);
        if (*train) return cmd_train(common, ta);
        if (*evaluate) return cmd_eval(common, ea);
        if (*sweep_cmd) return cmd_sweep(common, sa);
        if (*defaults) {
            std::cout << RunConfig().dump();
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
