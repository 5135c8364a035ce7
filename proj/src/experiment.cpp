#include "skipfuse/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "skipfuse/error.hpp"
#include "skipfuse/loss.hpp"
#include "skipfuse/parallel.hpp"
#include "skipfuse/rng.hpp"

namespace skipfuse::experiment {

namespace {

// Stream salts; each independent use of the master seed gets its own key.
constexpr std::uint64_t kInitSalt = 0x1417;
constexpr std::uint64_t kStepSalt = 0x57e9;
constexpr std::uint64_t kEvalSalt = 0xe7a1;
constexpr std::uint64_t kSubsetSalt = 0x5b5e;
constexpr std::uint64_t kSceneSalt = 0x5ce7e;

std::uint64_t mode_key(Mode mode) { return static_cast<std::uint64_t>(mode) + 1; }

}  // namespace

const unproject::FeatureMapSet& PreparedScene::require_features() const {
    if (!features) throw DataError(name + ": missing feature file " + missing_features);
    return *features;
}

PreparedScene prepare(const bundle::SceneBundle& b, double grid_size, int levels) {
    PreparedScene s;
    s.name = b.name;
    s.preset = b.preset;
    s.voxelized = cloud::grid_sample(b.cloud, grid_size);
    s.hierarchy = cloud::build_hierarchy(s.voxelized, levels);
    const Matrix* colors = nullptr;
    Matrix voxel_colors;
    if (b.cloud.colors) {
        voxel_colors.resize(s.voxelized.size(), b.cloud.colors->cols());
        for (int i = 0; i < s.voxelized.size(); ++i)
            voxel_colors.row(i) = b.cloud.colors->row(s.voxelized.voxel_to_raw[static_cast<std::size_t>(i)]);
        colors = &voxel_colors;
    }
    s.input = net::make_input(s.voxelized.positions, colors, s.hierarchy.origin);
    s.raw_labels = b.cloud.labels ? *b.cloud.labels : std::vector<int>(static_cast<std::size_t>(b.cloud.size()), kIgnoreLabel);
    for (int raw : s.voxelized.voxel_to_raw) s.voxel_labels.push_back(s.raw_labels[static_cast<std::size_t>(raw)]);
    s.views = b.views;
    s.features = b.features;
    s.missing_features = b.missing_features;
    s.domain = b.cloud.dataset_id;
    s.num_classes = b.num_classes();
    return s;
}

Mode parse_mode(const std::string& name) {
    if (name == "baseline") return Mode::Baseline;
    if (name == "inject") return Mode::Inject;
    if (name == "distill") return Mode::Distill;
    if (name == "finetune") return Mode::Finetune;
    throw ConfigError("unknown training mode '" + name + "'");
}

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::Baseline: return "baseline";
        case Mode::Inject: return "inject";
        case Mode::Distill: return "distill";
        case Mode::Finetune: return "finetune";
    }
    return "?";
}

Settings Settings::from(const RunConfig& c) {
    Settings s;
    s.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    s.threads = c.get_int("threads");
    if (s.threads < 1) throw ConfigError("threads must be at least 1");
    s.grid_size = c.get_double("grid.size");
    if (!(s.grid_size > 0.0)) throw ConfigError("grid.size must be positive");
    s.levels = c.get_int("net.levels");
    s.widths = c.get_int_list("net.widths");
    s.injection = net::parse_injection(c.get("net.injection"));
    s.norm_domains = c.get_int("net.norm_domains");

    s.assign.sampling = unproject::parse_sampling(c.get("assign.sampling"));
    s.assign.multi_view = unproject::parse_multi_view(c.get("assign.multi_view"));
    s.assign.filter.occlusion = c.get_bool("assign.occlusion");
    s.assign.filter.margin = c.get_double("assign.margin");
    s.assign.filter.range = c.get_bool("assign.range");
    s.assign.filter.near = c.get_double("assign.near");
    s.assign.filter.far = c.get_double("assign.far");
    s.assign.threads = s.threads;

    s.train_views = {c.get_int("views.train_count"), unproject::parse_selection(c.get("views.train_strategy"))};
    s.eval_views = {c.get_int("views.eval_count"), unproject::parse_selection(c.get("views.eval_strategy"))};
    if (s.train_views.count < 0 || s.eval_views.count < 0) throw ConfigError("view counts must be nonnegative");

    s.optim.peak_lr = c.get_double("optim.peak_lr");
    s.optim.weight_decay = c.get_double("optim.weight_decay");
    s.optim.pct_start = c.get_double("optim.pct_start");
    s.optim.div_factor = c.get_double("optim.div_factor");
    s.optim.final_div_factor = c.get_double("optim.final_div_factor");
    if (!(s.optim.peak_lr >= 0.0) || !(s.optim.div_factor > 0.0) || !(s.optim.final_div_factor > 0.0) ||
        !(s.optim.pct_start >= 0.0 && s.optim.pct_start <= 1.0))
        throw ConfigError("invalid optimizer schedule settings");

    s.steps = c.get_int("train.steps");
    s.total_steps = c.get_int("train.total_steps");
    if (s.steps < 0 || s.total_steps < 0) throw ConfigError("step counts must be nonnegative");
    s.proportions = c.get_double_list("distill.proportions");
    s.finetune_fraction = c.get_double("finetune.fraction");
    const auto& recipe = c.get("finetune.recipe");
    if (recipe != "full" && recipe != "reduced") throw ConfigError("finetune.recipe must be full or reduced");
    s.reduced_recipe = recipe == "reduced";
    const auto& budget = c.get("finetune.budget");
    if (budget != "auto") {
        s.budget = c.get_double("finetune.budget");
        if (!(*s.budget > 0.0)) throw ConfigError("finetune.budget must be positive or auto");
    }
    s.split_visible = c.get_bool("eval.split_visible");
    return s;
}

std::int64_t phase_steps(const Settings& settings, Mode mode, std::span<const PreparedScene> scenes) {
    if (mode != Mode::Finetune) return settings.steps;
    double budget = 1.0;
    if (settings.budget) {
        budget = *settings.budget;
    } else if (!scenes.empty() && scenes.front().preset != "hard") {
        budget = 0.1;
    }
    return static_cast<std::int64_t>(std::llround(budget * static_cast<double>(settings.steps)));
}

net::NetConfig net_config(const Settings& settings, Mode mode, std::span<const PreparedScene> scenes) {
    if (scenes.empty()) throw InputError("no scenes to size the network from");
    net::NetConfig c;
    c.levels = settings.levels;
    c.widths = settings.widths;
    c.input_dim = static_cast<int>(scenes.front().input.cols());
    c.num_classes = scenes.front().num_classes;
    c.feature_dim_2d = scenes.front().features ? scenes.front().features->feature_dim : 0;
    for (const auto& s : scenes) {
        if (s.num_classes != c.num_classes) throw DataError(s.name + ": class count differs from the other scenes");
        if (s.input.cols() != c.input_dim) throw DataError(s.name + ": input features differ from the other scenes");
        if (s.features && c.feature_dim_2d != 0 && s.features->feature_dim != c.feature_dim_2d)
            throw DataError(s.name + ": feature dimension differs from the other scenes");
        if (s.features && c.feature_dim_2d == 0) c.feature_dim_2d = s.features->feature_dim;
    }
    c.injection = mode == Mode::Inject ? settings.injection : net::Injection::None;
    c.head = mode == Mode::Distill ? net::Head::Regression : net::Head::Segmentation;
    if (c.feature_dim_2d == 0) {
        if (c.injection != net::Injection::None || c.head == net::Head::Regression)
            throw DataError(scenes.front().name + ": missing feature file " + scenes.front().missing_features);
        c.feature_dim_2d = 1;  // unused by this network
    }
    c.norm_domains = settings.norm_domains;
    c.init_seed = derive_seed(settings.seed, kInitSalt);
    c.validate();
    return c;
}

Checkpoint init_checkpoint(const Settings& settings, Mode mode, std::span<const PreparedScene> scenes,
                           const std::string& config_echo) {
    return Checkpoint{net::ToyNet(net_config(settings, mode, scenes)), {}, {}, config_echo};
}

unproject::FeatureAssignment scene_features(const PreparedScene& scene, const ViewPolicy& views,
                                            const unproject::AssignmentPolicy& policy, std::uint64_t key) {
    const auto& maps = scene.require_features();
    const auto chosen = unproject::select_views(scene.views, views.count, views.strategy, derive_seed(key, 1));
    auto [v, m] = unproject::subset(scene.views, maps, chosen);
    auto p = policy;
    p.rng_seed = derive_seed(key, 2);
    return unproject::assign_features(scene.hierarchy, v, m, p);
}

std::vector<int> training_subset(const Settings& settings, Mode mode, int scene_count) {
    if (mode != Mode::Finetune) {
        std::vector<int> all(static_cast<std::size_t>(scene_count));
        for (int i = 0; i < scene_count; ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
    }
    return distill::finetune_subset(scene_count, settings.finetune_fraction, derive_seed(settings.seed, kSubsetSalt));
}

TrainReport train(Checkpoint& ck, std::span<const PreparedScene> scenes, const Settings& settings, Mode mode,
                  std::int64_t steps, std::ostream* log) {
    TrainReport report;
    if (steps <= 0) return report;
    if (scenes.empty()) throw InputError("no training scenes");

    auto& net = ck.net;
    const bool new_phase = ck.trainer.mode != to_string(mode);
    if (mode == Mode::Finetune && net.config().head == net::Head::Regression) net.swap_head(net::Head::Segmentation);
    const auto& cfg = net.config();
    if ((mode == Mode::Distill) != (cfg.head == net::Head::Regression))
        throw ConfigError(to_string(mode) + " training needs a " + (mode == Mode::Distill ? "regression" : "segmentation") +
                          " head");
    if ((mode == Mode::Distill || mode == Mode::Finetune || mode == Mode::Baseline) && cfg.injection != net::Injection::None)
        throw ConfigError(to_string(mode) + " training needs a network without image injection");
    const bool needs_features = mode == Mode::Distill || cfg.injection != net::Injection::None;

    if (new_phase) {
        ck.trainer = TrainerState{to_string(mode), 0,
                                  settings.total_steps > 0 ? settings.total_steps : phase_steps(settings, mode, scenes), 0};
        ck.optimizer.reset();
    }

    auto optim = settings.optim;
    if (mode == Mode::Finetune && settings.reduced_recipe) optim.trunk_lr_scale = 0.1;

    // Domains in ascending dataset id; every batch draws from one of them.
    const auto subset = training_subset(settings, mode, static_cast<int>(scenes.size()));
    std::map<int, std::vector<int>> by_domain;
    for (int i : subset) {
        const auto& s = scenes[static_cast<std::size_t>(i)];
        if (s.domain < 0 || s.domain >= cfg.norm_domains)
            throw ConfigError(s.name + ": dataset id " + std::to_string(s.domain) + " needs net.norm_domains > " +
                              std::to_string(s.domain));
        if (needs_features) s.require_features();
        by_domain[s.domain].push_back(i);
    }
    std::vector<int> domain_ids;
    std::vector<const std::vector<int>*> pools;
    for (const auto& [d, pool] : by_domain) {
        domain_ids.push_back(d);
        pools.push_back(&pool);
    }
    auto mix = settings.proportions.size() == domain_ids.size()
                   ? distill::MixSchedule::from_weights(settings.proportions)
                   : distill::MixSchedule::uniform(static_cast<int>(domain_ids.size()));
    if (settings.proportions.size() != domain_ids.size() && settings.proportions.size() != 1)
        throw ConfigError("distill.proportions lists " + std::to_string(settings.proportions.size()) +
                          " entries for " + std::to_string(domain_ids.size()) + " domains");

    if (log) *log << "# step domain scene loss lr\n";
    const std::int64_t start = ck.trainer.step;
    const std::int64_t end = start + steps;
    const auto schedule = distill::schedule_batches(mix, end);
    const auto loss_kind = mode == Mode::Distill ? net::LossKind::Cosine : net::LossKind::CrossEntropy;
    const std::uint64_t phase_seed = derive_seed(derive_seed(settings.seed, kStepSalt), mode_key(mode));

    for (std::int64_t step = start; step < end; ++step) {
        const std::uint64_t key = derive_seed(phase_seed, static_cast<std::uint64_t>(step));
        const int slot = schedule[static_cast<std::size_t>(step)];
        const auto& pool = *pools[static_cast<std::size_t>(slot)];
        const int index = pool[static_cast<std::size_t>(bounded(derive_seed(key, 0), pool.size()))];
        const auto& scene = scenes[static_cast<std::size_t>(index)];

        net::Batch batch;
        batch.input = {&scene.hierarchy, scene.input, nullptr, scene.domain};
        std::optional<unproject::FeatureAssignment> assignment;
        if (needs_features) {
            assignment = scene_features(scene, settings.train_views, settings.assign, derive_seed(key, 1));
            if (cfg.injection != net::Injection::None) batch.input.image_pyramid = &assignment->pyramid;
        }
        const double position =
            std::min(1.0, static_cast<double>(step) / static_cast<double>(std::max<std::int64_t>(ck.trainer.total_steps, 1)));
        const double lr = net::learning_rate(optim, position);

        double value = 0.0;
        bool skipped = false;
        if (mode == Mode::Distill) {
            if (assignment->visible_set.empty()) {
                skipped = true;
            } else {
                batch.targets = assignment->features;
                batch.visible = assignment->visible_set;
            }
        } else {
            batch.labels = scene.voxel_labels;
        }
        if (skipped) {
            ++ck.trainer.skipped;
            ++report.skipped;
        } else {
            value = net::train_step(net, batch, loss_kind, ck.optimizer, optim, position);
            if (report.steps_run == report.skipped) report.first_loss = value;
            report.last_loss = value;
        }
        ++report.steps_run;
        ck.trainer.step = step + 1;
        if (log) {
            char line[160];
            if (skipped)
                std::snprintf(line, sizeof line, "%lld %d %s skip %.6e\n", static_cast<long long>(step),
                              domain_ids[static_cast<std::size_t>(slot)], scene.name.c_str(), lr);
            else
                std::snprintf(line, sizeof line, "%lld %d %s %.6f %.6e\n", static_cast<long long>(step),
                              domain_ids[static_cast<std::size_t>(slot)], scene.name.c_str(), value, lr);
            *log << line;
        }
    }
    return report;
}

SceneOutput predict(const net::ToyNet& net, const PreparedScene& scene, const Settings& settings, int scene_index) {
    SceneOutput out;
    const bool injected = net.config().injection != net::Injection::None;
    if (scene.features || injected) {
        const std::uint64_t key = derive_seed(derive_seed(settings.seed, kEvalSalt), static_cast<std::uint64_t>(scene_index));
        out.assignment = scene_features(scene, settings.eval_views, settings.assign, key);
    }
    const net::NetInput input{&scene.hierarchy, scene.input, injected ? &out.assignment.pyramid : nullptr, scene.domain};
    auto result = net::forward(net, input, net::Mode::Eval);
    out.output = std::move(result.output);
    out.features = std::move(result.cache.head_input);
    return out;
}

Evaluation evaluate(const net::ToyNet& net, std::span<const PreparedScene> scenes, const Settings& settings,
                    bool split_visible) {
    if (net.config().head != net::Head::Segmentation) throw ConfigError("evaluation needs a segmentation head");
    const int classes = net.config().num_classes;
    Evaluation ev;
    ev.confusion = eval::ConfusionMatrix(classes);
    eval::ConfusionMatrix visible(classes), invisible(classes);
    int with_features = 0;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
        const auto& scene = scenes[k];
        if (split_visible) scene.require_features();
        const auto out = predict(net, scene, settings, static_cast<int>(k));
        std::vector<int> voxel_pred(static_cast<std::size_t>(out.output.rows()));
        for (Eigen::Index i = 0; i < out.output.rows(); ++i) {
            Eigen::Index arg = 0;
            out.output.row(i).maxCoeff(&arg);
            voxel_pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
        }
        std::vector<int> pred;
        pred.reserve(scene.raw_labels.size());
        for (int v : scene.voxelized.raw_to_voxel) pred.push_back(voxel_pred[static_cast<std::size_t>(v)]);
        ev.confusion.add(scene.raw_labels, pred);

        if (scene.features) {
            const double c = unproject::coverage_fraction(out.assignment, scene.voxel_labels);
            ev.scene_coverage.push_back(c);
            ev.coverage += c;
            ++with_features;
        }
        if (split_visible) {
            std::vector<int> raw_visible;
            for (std::size_t i = 0; i < scene.voxelized.raw_to_voxel.size(); ++i)
                if (out.assignment.source_view[static_cast<std::size_t>(scene.voxelized.raw_to_voxel[i])] >= 0)
                    raw_visible.push_back(static_cast<int>(i));
            const auto split = eval::split_miou(pred, scene.raw_labels, raw_visible, classes);
            visible += split.visible_confusion;
            invisible += split.invisible_confusion;
        }
    }
    if (with_features > 0) ev.coverage /= with_features;
    ev.miou = eval::miou(ev.confusion);
    if (split_visible) {
        eval::SplitMiou split{std::nullopt, std::nullopt, visible, invisible};
        if (visible.total() > 0) split.visible = eval::miou(visible);
        if (invisible.total() > 0) split.invisible = eval::miou(invisible);
        ev.split = std::move(split);
    }
    return ev;
}

DistillEvaluation evaluate_distill(const net::ToyNet& net, std::span<const PreparedScene> scenes,
                                   const Settings& settings, const Matrix* prototypes) {
    if (net.config().head != net::Head::Regression) throw ConfigError("distillation evaluation needs a regression head");
    DistillEvaluation ev;
    distill::ClassSeparation acc;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
        const auto& scene = scenes[k];
        scene.require_features();
        const auto out = predict(net, scene, settings, static_cast<int>(k));
        if (!out.assignment.visible_set.empty()) {
            ev.cosine_loss += loss::cosine_loss(out.output, out.assignment.features, out.assignment.visible_set).value;
            ++ev.scenes;
        }
        if (prototypes) distill::accumulate_separation(acc, out.output, scene.voxel_labels, *prototypes);
    }
    if (ev.scenes > 0) ev.cosine_loss /= ev.scenes;
    ev.separation = distill::finish(acc);
    return ev;
}

synth::SceneSpec scene_spec(const RunConfig& c, int index) {
    const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
    auto spec = synth::preset_spec(synth::parse_preset(c.get("synth.preset")),
                                   derive_seed(derive_seed(seed, kSceneSalt), static_cast<std::uint64_t>(index)));
    spec.camera_count = c.get_int("synth.cameras");
    spec.trajectory = synth::parse_trajectory(c.get("synth.trajectory"));
    spec.feature_dim = c.get_int("synth.feature_dim");
    spec.noise = c.get_double("synth.noise");
    spec.density = c.get_double("synth.density");
    spec.image_width = c.get_int("synth.image_width");
    spec.image_height = c.get_int("synth.image_height");
    spec.patch_size = c.get_int("synth.patch_size");
    spec.focal = c.get_double("synth.focal");
    spec.dataset_id = c.get_int("synth.dataset_id");
    spec.validate();
    return spec;
}

std::vector<bundle::SceneBundle> synthesize(const RunConfig& c) {
    const int count = c.get_int("synth.scenes");
    if (count < 0) throw ConfigError("synth.scenes must be nonnegative");
    const auto preset = c.get("synth.preset");
    std::vector<synth::SceneSpec> specs;
    for (int i = 0; i < count; ++i) specs.push_back(scene_spec(c, i));
    std::vector<bundle::SceneBundle> out(static_cast<std::size_t>(count));
    parallel_for(static_cast<std::size_t>(count), c.get_int("threads"), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "scene_%03zu", i);
            out[i] = bundle::from_scene(synth::generate_scene(specs[i]), name, preset);
        }
    });
    return out;
}

Split split_indices(int scene_count, int test_scenes) {
    if (test_scenes < 0) throw ConfigError("synth.test_scenes must be nonnegative");
    Split s;
    const int held = std::min(test_scenes, scene_count);
    for (int i = 0; i < scene_count; ++i) (i < scene_count - held ? s.train : s.test).push_back(i);
    return s;
}

Matrix preset_prototypes(const RunConfig& c) {
    const auto spec = scene_spec(c, 0);
    return synth::make_prototypes(spec.num_classes, spec.feature_dim, spec.prototype_seed);
}

}  // namespace skipfuse::experiment
