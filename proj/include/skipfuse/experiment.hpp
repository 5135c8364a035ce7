#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skipfuse/bundle.hpp"
#include "skipfuse/checkpoint.hpp"
#include "skipfuse/cloud.hpp"
#include "skipfuse/config.hpp"
#include "skipfuse/distill.hpp"
#include "skipfuse/evalkit.hpp"
#include "skipfuse/net.hpp"
#include "skipfuse/synthworld.hpp"
#include "skipfuse/train.hpp"
#include "skipfuse/unproject.hpp"

namespace skipfuse::experiment {

/// A bundle turned into network-ready form: voxelized, pooled, with the
/// representative's label per voxel.
struct PreparedScene {
    std::string name;
    std::string preset;
    cloud::VoxelizedCloud voxelized;
    cloud::PoolingHierarchy hierarchy;
    Matrix input;
    std::vector<int> voxel_labels;
    std::vector<int> raw_labels;
    std::vector<geometry::CameraView> views;
    std::optional<unproject::FeatureMapSet> features;
    std::string missing_features;
    int domain = 0;
    int num_classes = 0;

    /// Throws DataError naming the missing file when features are absent.
    const unproject::FeatureMapSet& require_features() const;
};

PreparedScene prepare(const bundle::SceneBundle& bundle, double grid_size, int levels);

struct ViewPolicy {
    int count = 10;
    unproject::Selection strategy = unproject::Selection::Equidistant;
};

enum class Mode { Baseline, Inject, Distill, Finetune };
Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

/// Typed view of the RunConfig keys the pipeline consumes.
struct Settings {
    std::uint64_t seed = 1;
    int threads = 1;
    double grid_size = 0.1;
    int levels = 4;
    std::vector<int> widths{16, 32, 48, 64};
    net::Injection injection = net::Injection::DecoderAll;
    int norm_domains = 1;
    unproject::AssignmentPolicy assign;
    ViewPolicy train_views{10, unproject::Selection::Random};
    ViewPolicy eval_views{10, unproject::Selection::Equidistant};
    net::OptimizerConfig optim;
    std::int64_t steps = 1000;
    std::int64_t total_steps = 0;  // 0: phase_steps()
    std::vector<double> proportions{1.0};
    double finetune_fraction = 1.0;
    bool reduced_recipe = false;
    std::optional<double> budget;  // unset: by preset
    bool split_visible = false;

    static Settings from(const RunConfig& config);
};

/// Steps a phase runs for: train.steps, scaled by the fine-tuning budget in
/// finetune mode (auto budget: 1.0 for "hard" scenes, 0.1 otherwise).
std::int64_t phase_steps(const Settings& settings, Mode mode, std::span<const PreparedScene> scenes);

/// Network for `mode` sized to the scenes. Distill uses the regression head
/// and no injection; baseline and finetune use no injection.
net::NetConfig net_config(const Settings& settings, Mode mode, std::span<const PreparedScene> scenes);

/// Fresh checkpoint for `mode`; initialization is seeded from settings.seed.
Checkpoint init_checkpoint(const Settings& settings, Mode mode, std::span<const PreparedScene> scenes,
                           const std::string& config_echo);

/// Unprojected image features of a scene for a view policy. `key` selects
/// the random views and the per-point view draws.
unproject::FeatureAssignment scene_features(const PreparedScene& scene, const ViewPolicy& views,
                                            const unproject::AssignmentPolicy& policy, std::uint64_t key);

struct TrainReport {
    std::int64_t steps_run = 0;
    std::int64_t skipped = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Continues (same mode) or starts a phase and runs `steps` optimizer
/// steps. A new phase's schedule spans train.total_steps, or phase_steps()
/// when that is 0. Per-step randomness depends only on (seed, mode, step),
/// so a split run equals an uninterrupted one. Finetune mode swaps a
/// regression head for a segmentation head and trains on the labeled
/// subset. One line per step goes to `log`: step domain scene loss lr.
TrainReport train(Checkpoint& checkpoint, std::span<const PreparedScene> scenes, const Settings& settings, Mode mode,
                  std::int64_t steps, std::ostream* log);

/// Scenes a phase trains on (the labeled subset in finetune mode).
std::vector<int> training_subset(const Settings& settings, Mode mode, int scene_count);

struct SceneOutput {
    Matrix output;        // head output per voxel
    Matrix features;      // head input per voxel
    unproject::FeatureAssignment assignment;  // empty when the scene has no features
};

/// Eval-mode forward with the evaluation view policy; view draws are keyed
/// by (seed, scene index) and therefore identical across models.
SceneOutput predict(const net::ToyNet& net, const PreparedScene& scene, const Settings& settings, int scene_index);

struct Evaluation {
    eval::ConfusionMatrix confusion;
    eval::MiouResult miou;
    std::optional<eval::SplitMiou> split;
    double coverage = 0.0;  // mean over scenes with features
    std::vector<double> scene_coverage;
};

/// Segmentation metrics over raw points (each takes its voxel's prediction).
Evaluation evaluate(const net::ToyNet& net, std::span<const PreparedScene> scenes, const Settings& settings,
                    bool split_visible);

struct DistillEvaluation {
    double cosine_loss = 0.0;  // mean over scenes with a nonempty visible set
    int scenes = 0;
    distill::ClassSeparation separation;  // against `prototypes`, all labeled voxels
};

DistillEvaluation evaluate_distill(const net::ToyNet& net, std::span<const PreparedScene> scenes,
                                   const Settings& settings, const Matrix* prototypes);

/// Scene spec for index `i` of a config's synthetic set.
synth::SceneSpec scene_spec(const RunConfig& config, int index);

/// Generates synth.scenes bundles named scene_000, scene_001, ...
std::vector<bundle::SceneBundle> synthesize(const RunConfig& config);

/// Index split: the last synth.test_scenes scenes are held out.
struct Split {
    std::vector<int> train;
    std::vector<int> test;
};
Split split_indices(int scene_count, int test_scenes);

/// Prototypes behind a preset's teacher features.
Matrix preset_prototypes(const RunConfig& config);

}  // namespace skipfuse::experiment
