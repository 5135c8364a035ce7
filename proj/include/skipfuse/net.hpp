#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "skipfuse/cloud.hpp"
#include "skipfuse/rng.hpp"
#include "skipfuse/types.hpp"

namespace skipfuse::net {

/// Where image features enter the network.
enum class Injection { None, PreEncoder, DecoderLast, DecoderAll, PreHead };
enum class Head { Segmentation, Regression };
/// Identity exists for hand-checkable linear tests only.
enum class Activation { Gelu, Identity };
enum class Mode { Train, Eval };

struct NetConfig {
    int levels = 3;
    std::vector<int> widths{32, 48, 64};
    int input_dim = 3;
    int feature_dim_2d = 16;
    int num_classes = 8;
    Injection injection = Injection::None;
    Head head = Head::Segmentation;
    int norm_domains = 1;
    Activation activation = Activation::Gelu;
    std::uint64_t init_seed = 0;

    /// Throws ConfigError on inconsistent fields.
    void validate() const;
    int output_dim() const { return head == Head::Segmentation ? num_classes : feature_dim_2d; }
};

struct Parameter {
    std::string name;
    Matrix value;
    bool head = false;   // belongs to the segmentation or regression head
    bool decay = false;  // receives decoupled weight decay
};

struct NormStatistics {
    RowVector mean;
    RowVector var;
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kNormMomentum = 0.9;

/// Affine layer, per-domain normalization, activation. Indices refer to
/// ToyNet::parameters(); `stats` indexes ToyNet::statistics().
struct Unit {
    int weight = -1;
    int bias = -1;
    std::vector<int> gamma;  // per domain
    std::vector<int> beta;   // per domain
    int stats = -1;
    int in = 0;
    int out = 0;
};

struct Linear {
    int weight = -1;
    int bias = -1;
};

/// Per-level encoder/decoder blocks and the three fusion projections that
/// feed each decoder block.
struct Topology {
    Unit stem;
    std::vector<std::array<Unit, 2>> encoder;
    std::array<Unit, 2> bottleneck;
    std::vector<std::array<Unit, 2>> decoder;
    std::vector<Unit> fuse_previous;  // applied to the unpooled coarser decoder output
    std::vector<Unit> fuse_skip;      // applied to the encoder output
    std::vector<Unit> fuse_image;     // applied to the pooled image features
    Linear segmentation_head;
    Linear regression_head;
};

/// Hierarchical point encoder-decoder. Parameters are stored by name in a
/// flat list; the topology records which entries form each layer.
class ToyNet {
public:
    explicit ToyNet(NetConfig config);

    const NetConfig& config() const { return config_; }
    const Topology& topology() const { return topology_; }

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    int find(const std::string& name) const;
    std::size_t scalar_count() const;

    std::vector<std::vector<NormStatistics>>& statistics() { return stats_; }
    const std::vector<std::vector<NormStatistics>>& statistics() const { return stats_; }

    /// Replaces the active head; the new head is drawn fresh from the
    /// initializer stream. Trunk parameters are untouched.
    void swap_head(Head head);

    /// Bumped whenever parameters change; forward caches remember it.
    std::uint64_t version() const { return version_; }
    void touch() { ++version_; }

    Rng& init_rng() { return init_rng_; }
    const Rng& init_rng() const { return init_rng_; }

    /// Indices of the active head's parameters.
    std::vector<int> head_parameters() const;

private:
    int add(std::string name, Matrix value, bool head, bool decay);
    Unit make_unit(const std::string& name, int in, int out);
    Linear make_linear(const std::string& name, int in, int out, bool head);
    void init_linear(const Linear& l);

    NetConfig config_;
    Topology topology_;
    std::vector<Parameter> params_;
    std::vector<std::vector<NormStatistics>> stats_;
    Rng init_rng_;
    std::uint64_t version_ = 0;
};

/// Network inputs for one scene. `image_pyramid` is required iff injection
/// is enabled; all pointers must outlive the forward cache.
struct NetInput {
    const cloud::PoolingHierarchy* hierarchy = nullptr;
    Matrix points;                                 // M x input_dim
    const std::vector<Matrix>* image_pyramid = nullptr;
    int domain = 0;
};

struct UnitCache {
    Matrix input;
    Matrix xhat;
    Matrix pre_activation;
    Matrix cdf;  // standard normal CDF of pre_activation (GELU only)
    RowVector inv_std;
    RowVector batch_mean;
    RowVector batch_var;
    bool used = false;
};

struct ForwardCache {
    const ToyNet* net = nullptr;
    std::uint64_t version = 0;
    Mode mode = Mode::Eval;
    Head head = Head::Segmentation;
    int domain = 0;
    const cloud::PoolingHierarchy* hierarchy = nullptr;
    const std::vector<Matrix>* image_pyramid = nullptr;
    int input_rows = 0;

    UnitCache stem;
    std::vector<std::array<UnitCache, 2>> encoder;
    std::array<UnitCache, 2> bottleneck;
    std::vector<std::array<UnitCache, 2>> decoder;
    std::vector<UnitCache> fuse_previous, fuse_skip, fuse_image;
    UnitCache pre_encoder_image;  // f^2D_1 when used before the encoder
    UnitCache pre_head_image;     // f^2D_1 when used before the head
    std::vector<std::vector<int>> pool_argmax;  // encoder pooling, per level
    Matrix head_input;
};

struct ForwardResult {
    Matrix output;
    ForwardCache cache;
};

/// Runs the network. Train mode normalizes with batch statistics (recorded
/// in the cache, not applied); eval mode uses the stored running statistics.
ForwardResult forward(const ToyNet& net, const NetInput& input, Mode mode);

/// Applies the momentum update for the batch statistics recorded by a
/// train-mode forward. Only the cached domain's statistics change.
void commit_statistics(ToyNet& net, const ForwardCache& cache);

struct Gradients {
    std::vector<Matrix> params;  // aligned with ToyNet::parameters()
    Matrix input;                // d loss / d points
    Matrix image_features;       // d loss / d level-0 image features (empty without injection)
};

/// Exact gradients of sum(output_gradient ⊙ output). Max pooling routes to
/// the recorded argmax child. Throws InternalError if the cache is stale.
Gradients backward(const ToyNet& net, const ForwardCache& cache, const Matrix& output_gradient);

/// Position features relative to `origin`, optionally followed by colors.
Matrix make_input(const Matrix& positions, const Matrix* colors, const Vec3& origin);

Injection parse_injection(const std::string& name);
std::string to_string(Injection injection);
Head parse_head(const std::string& name);
std::string to_string(Head head);

}  // namespace skipfuse::net
