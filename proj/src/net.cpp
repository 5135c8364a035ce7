#include "skipfuse/net.hpp"

#include <cmath>
#include <numbers>

#include "skipfuse/error.hpp"

namespace skipfuse::net {

void NetConfig::validate() const {
    if (levels < 1) throw ConfigError("net: levels must be at least 1");
    if (static_cast<int>(widths.size()) != levels)
        throw ConfigError("net: expected " + std::to_string(levels) + " widths, got " + std::to_string(widths.size()));
    for (int w : widths)
        if (w < 1) throw ConfigError("net: widths must be positive");
    if (input_dim < 1 || feature_dim_2d < 1 || num_classes < 1) throw ConfigError("net: dimensions must be positive");
    if (norm_domains < 1) throw ConfigError("net: norm_domains must be at least 1");
}

ToyNet::ToyNet(NetConfig config) : config_(std::move(config)), init_rng_(config_.init_seed) {
    config_.validate();
    const int levels = config_.levels;
    const auto& w = config_.widths;
    auto& t = topology_;
    t.stem = make_unit("stem", config_.input_dim, w[0]);
    for (int l = 0; l < levels; ++l) {
        const std::string p = "enc" + std::to_string(l);
        const int in = l == 0 ? w[0] : w[l - 1];
        t.encoder.push_back({make_unit(p + ".0", in, w[l]), make_unit(p + ".1", w[l], w[l])});
    }
    t.bottleneck = {make_unit("bottleneck.0", w[levels - 1], w[levels - 1]),
                    make_unit("bottleneck.1", w[levels - 1], w[levels - 1])};
    t.decoder.resize(levels);
    t.fuse_previous.resize(levels);
    t.fuse_skip.resize(levels);
    t.fuse_image.resize(levels);
    for (int l = levels - 1; l >= 0; --l) {
        const std::string p = "dec" + std::to_string(l);
        const int previous = l == levels - 1 ? w[levels - 1] : w[l + 1];
        t.fuse_previous[l] = make_unit(p + ".fuse_prev", previous, w[l]);
        t.fuse_skip[l] = make_unit(p + ".fuse_skip", w[l], w[l]);
        t.fuse_image[l] = make_unit(p + ".fuse_image", config_.feature_dim_2d, w[l]);
        t.decoder[l] = {make_unit(p + ".0", w[l], w[l]), make_unit(p + ".1", w[l], w[l])};
    }
    t.segmentation_head = make_linear("head.seg", w[0], config_.num_classes, true);
    t.regression_head = make_linear("head.reg", w[0], config_.feature_dim_2d, true);
}

int ToyNet::add(std::string name, Matrix value, bool head, bool decay) {
    params_.push_back(Parameter{std::move(name), std::move(value), head, decay});
    return static_cast<int>(params_.size()) - 1;
}

void ToyNet::init_linear(const Linear& l) {
    auto& weight = params_[l.weight].value;
    auto& bias = params_[l.bias].value;
    const double bound = 1.0 / std::sqrt(static_cast<double>(weight.cols()));
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = init_rng_.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < bias.size(); ++i) bias.data()[i] = init_rng_.uniform(-bound, bound);
}

Linear ToyNet::make_linear(const std::string& name, int in, int out, bool head) {
    Linear l;
    l.weight = add(name + ".weight", Matrix(out, in), head, true);
    l.bias = add(name + ".bias", Matrix(1, out), head, false);
    init_linear(l);
    return l;
}

Unit ToyNet::make_unit(const std::string& name, int in, int out) {
    Unit u;
    const Linear l = make_linear(name, in, out, false);
    u.weight = l.weight;
    u.bias = l.bias;
    u.in = in;
    u.out = out;
    for (int d = 0; d < config_.norm_domains; ++d) {
        u.gamma.push_back(add(name + ".gamma.d" + std::to_string(d), Matrix::Ones(1, out), false, false));
        u.beta.push_back(add(name + ".beta.d" + std::to_string(d), Matrix::Zero(1, out), false, false));
    }
    u.stats = static_cast<int>(stats_.size());
    stats_.emplace_back(static_cast<std::size_t>(config_.norm_domains),
                        NormStatistics{RowVector::Zero(out), RowVector::Ones(out)});
    return u;
}

int ToyNet::find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return static_cast<int>(i);
    return -1;
}

std::size_t ToyNet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

std::vector<int> ToyNet::head_parameters() const {
    const Linear& h = config_.head == Head::Segmentation ? topology_.segmentation_head : topology_.regression_head;
    return {h.weight, h.bias};
}

void ToyNet::swap_head(Head head) {
    config_.head = head;
    init_linear(head == Head::Segmentation ? topology_.segmentation_head : topology_.regression_head);
    touch();
}

Matrix make_input(const Matrix& positions, const Matrix* colors, const Vec3& origin) {
    const int extra = colors ? static_cast<int>(colors->cols()) : 0;
    Matrix out(positions.rows(), 3 + extra);
    out.leftCols(3) = positions.rowwise() - origin.transpose();
    if (colors) {
        if (colors->rows() != positions.rows()) throw ShapeError("make_input: color rows do not match positions");
        out.rightCols(extra) = *colors;
    }
    return out;
}

namespace {

double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2); }

bool injects_at(Injection injection, int level) {
    return injection == Injection::DecoderAll || (injection == Injection::DecoderLast && level == 0);
}

class Pass {
public:
    Pass(const ToyNet& net, Mode mode, int domain) : net_(net), mode_(mode), domain_(domain) {}

    Matrix unit(const Unit& u, const Matrix& x, UnitCache& c) const {
        const auto& p = net_.parameters();
        const Matrix& weight = p[u.weight].value;
        const Matrix& bias = p[u.bias].value;
        const Matrix& gamma = p[u.gamma[domain_]].value;
        const Matrix& beta = p[u.beta[domain_]].value;

        Matrix z = x * weight.transpose();
        z.rowwise() += bias.row(0);
        RowVector mean;
        if (mode_ == Mode::Train) {
            mean = z.colwise().mean();
            c.batch_mean = mean;
            c.batch_var = (z.rowwise() - mean).array().square().colwise().mean().matrix();
            c.inv_std = (c.batch_var.array() + kNormEpsilon).rsqrt().matrix();
        } else {
            const auto& s = net_.statistics()[u.stats][domain_];
            mean = s.mean;
            c.inv_std = (s.var.array() + kNormEpsilon).rsqrt().matrix();
        }
        c.input = x;
        c.xhat = ((z.rowwise() - mean).array().rowwise() * c.inv_std.array()).matrix();
        c.pre_activation = (c.xhat.array().rowwise() * gamma.row(0).array()).matrix();
        c.pre_activation.rowwise() += beta.row(0);
        c.used = true;
        if (net_.config().activation == Activation::Identity) return c.pre_activation;
        c.cdf = c.pre_activation.unaryExpr([](double v) { return normal_cdf(v); });
        return (c.pre_activation.array() * c.cdf.array()).matrix();
    }

    Matrix unit_backward(const Unit& u, const UnitCache& c, const Matrix& upstream, Gradients& g) const {
        const auto& p = net_.parameters();
        Matrix dy = upstream;
        if (net_.config().activation == Activation::Gelu)
            dy.array() *= c.cdf.array() + c.pre_activation.array() * c.pre_activation.unaryExpr([](double v) { return normal_pdf(v); }).array();

        const Matrix& gamma = p[u.gamma[domain_]].value;
        g.params[u.gamma[domain_]] += (dy.array() * c.xhat.array()).colwise().sum().matrix();
        g.params[u.beta[domain_]] += dy.colwise().sum();

        Matrix dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
        Matrix dz;
        if (mode_ == Mode::Train) {
            const RowVector mean_d = dxhat.colwise().mean();
            const RowVector mean_dx = (dxhat.array() * c.xhat.array()).colwise().mean().matrix();
            Matrix centered = dxhat.rowwise() - mean_d;
            centered.array() -= c.xhat.array().rowwise() * mean_dx.array();
            dz = (centered.array().rowwise() * c.inv_std.array()).matrix();
        } else {
            dz = (dxhat.array().rowwise() * c.inv_std.array()).matrix();
        }
        g.params[u.weight] += dz.transpose() * c.input;
        g.params[u.bias] += dz.colwise().sum();
        return dz * p[u.weight].value;
    }

private:
    const ToyNet& net_;
    Mode mode_;
    int domain_;
};

const std::vector<Matrix>& require_pyramid(const ToyNet& net, const NetInput& input) {
    if (!input.image_pyramid)
        throw ConfigError("forward: injection '" + to_string(net.config().injection) +
                          "' requires image features but none were given");
    const auto& pyr = *input.image_pyramid;
    if (static_cast<int>(pyr.size()) < net.config().levels) throw ShapeError("forward: image pyramid has too few levels");
    for (int l = 0; l < net.config().levels; ++l) {
        if (pyr[l].rows() != input.hierarchy->size(l) || pyr[l].cols() != net.config().feature_dim_2d)
            throw ShapeError("forward: image pyramid level " + std::to_string(l) + " has the wrong shape");
    }
    return pyr;
}

}  // namespace

ForwardResult forward(const ToyNet& net, const NetInput& input, Mode mode) {
    const auto& cfg = net.config();
    const auto& t = net.topology();
    if (!input.hierarchy) throw InternalError("forward: missing hierarchy");
    const auto& h = *input.hierarchy;
    if (h.levels() < cfg.levels)
        throw ShapeError("forward: hierarchy has " + std::to_string(h.levels()) + " levels, network needs " +
                         std::to_string(cfg.levels));
    if (input.points.rows() != h.size(0) || input.points.cols() != cfg.input_dim)
        throw ShapeError("forward: input must be " + std::to_string(h.size(0)) + " x " + std::to_string(cfg.input_dim));
    if (input.domain < 0 || input.domain >= cfg.norm_domains)
        throw ConfigError("forward: domain " + std::to_string(input.domain) + " outside [0, " +
                          std::to_string(cfg.norm_domains) + ")");
    const std::vector<Matrix>* pyramid = nullptr;
    if (cfg.injection != Injection::None) pyramid = &require_pyramid(net, input);

    ForwardResult result;
    auto& c = result.cache;
    c.net = &net;
    c.version = net.version();
    c.mode = mode;
    c.head = cfg.head;
    c.domain = input.domain;
    c.hierarchy = input.hierarchy;
    c.image_pyramid = pyramid;
    c.input_rows = static_cast<int>(input.points.rows());
    const int levels = cfg.levels;
    c.encoder.resize(levels);
    c.decoder.resize(levels);
    c.fuse_previous.resize(levels);
    c.fuse_skip.resize(levels);
    c.fuse_image.resize(levels);
    c.pool_argmax.resize(levels);

    Pass pass(net, mode, input.domain);
    Matrix x = pass.unit(t.stem, input.points, c.stem);
    if (cfg.injection == Injection::PreEncoder) x += pass.unit(t.fuse_image[0], (*pyramid)[0], c.pre_encoder_image);

    std::vector<Matrix> skips(levels);
    for (int l = 0; l < levels; ++l) {
        if (l > 0) x = cloud::max_pool(x, h, l - 1, &c.pool_argmax[l]);
        x = pass.unit(t.encoder[l][0], x, c.encoder[l][0]);
        x = pass.unit(t.encoder[l][1], x, c.encoder[l][1]);
        skips[l] = x;
    }
    Matrix d = pass.unit(t.bottleneck[0], skips[levels - 1], c.bottleneck[0]);
    d = pass.unit(t.bottleneck[1], d, c.bottleneck[1]);
    for (int l = levels - 1; l >= 0; --l) {
        const Matrix up = l == levels - 1 ? d : cloud::unpool(d, h, l);
        Matrix fused = pass.unit(t.fuse_previous[l], up, c.fuse_previous[l]);
        fused += pass.unit(t.fuse_skip[l], skips[l], c.fuse_skip[l]);
        if (injects_at(cfg.injection, l)) fused += pass.unit(t.fuse_image[l], (*pyramid)[l], c.fuse_image[l]);
        d = pass.unit(t.decoder[l][0], fused, c.decoder[l][0]);
        d = pass.unit(t.decoder[l][1], d, c.decoder[l][1]);
    }
    if (cfg.injection == Injection::PreHead) d += pass.unit(t.fuse_image[0], (*pyramid)[0], c.pre_head_image);

    const Linear& head = cfg.head == Head::Segmentation ? t.segmentation_head : t.regression_head;
    result.output = d * net.parameters()[head.weight].value.transpose();
    result.output.rowwise() += net.parameters()[head.bias].value.row(0);
    c.head_input = std::move(d);
    return result;
}

void commit_statistics(ToyNet& net, const ForwardCache& cache) {
    if (cache.mode != Mode::Train) return;
    if (cache.net != &net) throw InternalError("commit_statistics: cache belongs to a different network");
    const auto& t = net.topology();
    auto apply = [&](const Unit& u, const UnitCache& uc) {
        if (!uc.used) return;
        auto& s = net.statistics()[u.stats][cache.domain];
        s.mean = kNormMomentum * s.mean + (1.0 - kNormMomentum) * uc.batch_mean;
        s.var = kNormMomentum * s.var + (1.0 - kNormMomentum) * uc.batch_var;
    };
    apply(t.stem, cache.stem);
    for (int l = 0; l < net.config().levels; ++l) {
        apply(t.encoder[l][0], cache.encoder[l][0]);
        apply(t.encoder[l][1], cache.encoder[l][1]);
        apply(t.decoder[l][0], cache.decoder[l][0]);
        apply(t.decoder[l][1], cache.decoder[l][1]);
        apply(t.fuse_previous[l], cache.fuse_previous[l]);
        apply(t.fuse_skip[l], cache.fuse_skip[l]);
        apply(t.fuse_image[l], cache.fuse_image[l]);
    }
    // f^2D_1 may also run before the encoder or the head; each use is a
    // separate batch, applied in forward order.
    apply(t.fuse_image[0], cache.pre_encoder_image);
    apply(t.fuse_image[0], cache.pre_head_image);
    apply(t.bottleneck[0], cache.bottleneck[0]);
    apply(t.bottleneck[1], cache.bottleneck[1]);
}

Gradients backward(const ToyNet& net, const ForwardCache& cache, const Matrix& output_gradient) {
    if (cache.net != &net || cache.version != net.version() || cache.head != net.config().head)
        throw InternalError("backward: forward cache is stale");
    const auto& cfg = net.config();
    const auto& t = net.topology();
    const auto& params = net.parameters();
    const int levels = cfg.levels;
    if (output_gradient.rows() != cache.input_rows || output_gradient.cols() != cfg.output_dim())
        throw ShapeError("backward: output gradient has the wrong shape");

    Gradients g;
    g.params.reserve(params.size());
    for (const auto& p : params) g.params.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    std::vector<Matrix> image_grad;
    if (cache.image_pyramid) {
        for (int l = 0; l < levels; ++l)
            image_grad.push_back(Matrix::Zero((*cache.image_pyramid)[l].rows(), (*cache.image_pyramid)[l].cols()));
    }
    const auto& h = *cache.hierarchy;
    Pass pass(net, cache.mode, cache.domain);

    const Linear& head = cfg.head == Head::Segmentation ? t.segmentation_head : t.regression_head;
    g.params[head.weight] += output_gradient.transpose() * cache.head_input;
    g.params[head.bias] += output_gradient.colwise().sum();
    Matrix d = output_gradient * params[head.weight].value;

    if (cfg.injection == Injection::PreHead) image_grad[0] += pass.unit_backward(t.fuse_image[0], cache.pre_head_image, d, g);

    std::vector<Matrix> skip_grad(levels);
    for (int l = 0; l < levels; ++l) skip_grad[l] = Matrix::Zero(cache.encoder[l][1].pre_activation.rows(), cfg.widths[l]);

    for (int l = 0; l < levels; ++l) {
        d = pass.unit_backward(t.decoder[l][1], cache.decoder[l][1], d, g);
        const Matrix fused = pass.unit_backward(t.decoder[l][0], cache.decoder[l][0], d, g);
        if (injects_at(cfg.injection, l)) image_grad[l] += pass.unit_backward(t.fuse_image[l], cache.fuse_image[l], fused, g);
        skip_grad[l] += pass.unit_backward(t.fuse_skip[l], cache.fuse_skip[l], fused, g);
        const Matrix up = pass.unit_backward(t.fuse_previous[l], cache.fuse_previous[l], fused, g);
        if (l == levels - 1) {
            d = up;
        } else {
            // transpose of unpool: sum children into their parent
            d = Matrix::Zero(h.size(l + 1), up.cols());
            const auto& parent = h.parent[l];
            for (Eigen::Index i = 0; i < up.rows(); ++i) d.row(parent[i]) += up.row(i);
        }
    }
    d = pass.unit_backward(t.bottleneck[1], cache.bottleneck[1], d, g);
    d = pass.unit_backward(t.bottleneck[0], cache.bottleneck[0], d, g);
    skip_grad[levels - 1] += d;

    Matrix x;
    for (int l = levels - 1; l >= 0; --l) {
        Matrix e = l == levels - 1 ? skip_grad[l] : Matrix(skip_grad[l] + x);
        e = pass.unit_backward(t.encoder[l][1], cache.encoder[l][1], e, g);
        e = pass.unit_backward(t.encoder[l][0], cache.encoder[l][0], e, g);
        if (l > 0) {
            // route pooled gradients to the argmax children of level l - 1
            const auto& argmax = cache.pool_argmax[l];
            Matrix below = Matrix::Zero(h.size(l - 1), e.cols());
            for (Eigen::Index j = 0; j < e.rows(); ++j)
                for (Eigen::Index col = 0; col < e.cols(); ++col)
                    below(argmax[static_cast<std::size_t>(j * e.cols() + col)], col) += e(j, col);
            x = std::move(below);
        } else {
            x = std::move(e);
        }
    }
    if (cfg.injection == Injection::PreEncoder)
        image_grad[0] += pass.unit_backward(t.fuse_image[0], cache.pre_encoder_image, x, g);
    g.input = pass.unit_backward(t.stem, cache.stem, x, g);

    if (cache.image_pyramid) {
        for (int l = levels - 1; l > 0; --l) {
            std::vector<int> argmax;
            cloud::max_pool((*cache.image_pyramid)[l - 1], h, l - 1, &argmax);
            const auto cols = image_grad[l].cols();
            for (Eigen::Index j = 0; j < image_grad[l].rows(); ++j)
                for (Eigen::Index col = 0; col < cols; ++col)
                    image_grad[l - 1](argmax[static_cast<std::size_t>(j * cols + col)], col) += image_grad[l](j, col);
        }
        g.image_features = std::move(image_grad[0]);
    }
    return g;
}

Injection parse_injection(const std::string& name) {
    if (name == "none") return Injection::None;
    if (name == "pre_encoder") return Injection::PreEncoder;
    if (name == "decoder_last") return Injection::DecoderLast;
    if (name == "decoder_all") return Injection::DecoderAll;
    if (name == "pre_head") return Injection::PreHead;
    throw ConfigError("unknown injection mode '" + name + "'");
}

std::string to_string(Injection injection) {
    switch (injection) {
        case Injection::None: return "none";
        case Injection::PreEncoder: return "pre_encoder";
        case Injection::DecoderLast: return "decoder_last";
        case Injection::DecoderAll: return "decoder_all";
        case Injection::PreHead: return "pre_head";
    }
    return "none";
}

Head parse_head(const std::string& name) {
    if (name == "segmentation" || name == "seg") return Head::Segmentation;
    if (name == "regression" || name == "reg") return Head::Regression;
    throw ConfigError("unknown head '" + name + "'");
}

std::string to_string(Head head) { return head == Head::Segmentation ? "segmentation" : "regression"; }

}  // namespace skipfuse::net
