#include "retriage/nn.hpp"

#include <cmath>

#include "retriage/error.hpp"

namespace retriage::nn {

namespace ad = autodiff;

void BackboneConfig::validate() const {
    if (input_side < 8) throw ValidationError("backbone: input_side must be >= 8");
    if (stem_channels < 1) throw ValidationError("backbone: stem_channels must be >= 1");
    if (feature_dim < 1) throw ValidationError("backbone: feature_dim must be >= 1");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const BlockSpec& b = blocks[i];
        if (b.stride != 1 && b.stride != 2)
            throw ValidationError("backbone block " + std::to_string(i) + ": stride must be 1 or 2");
        if (b.kernel_size < 1 || b.kernel_size % 2 == 0)
            throw ValidationError("backbone block " + std::to_string(i) + ": kernel_size must be odd");
        if (b.expansion_channels < 1 || b.out_channels < 1)
            throw ValidationError("backbone block " + std::to_string(i) + ": channel counts must be >= 1");
    }
}

int BackboneConfig::channels_into(std::size_t i) const {
    int c = stem_channels;
    for (std::size_t j = 0; j < i && j < blocks.size(); ++j) c = blocks[j].out_channels;
    return c;
}

BackboneConfig BackboneConfig::tiny(int input_side) {
    BackboneConfig cfg;
    cfg.input_side = input_side;
    cfg.stem_channels = 8;
    cfg.blocks = {
        {16, 12, 3, 2, true, Activation::HardSwish},
        {36, 12, 3, 1, true, Activation::HardSwish},
        {48, 24, 5, 2, true, Activation::HardSwish},
        {72, 24, 5, 1, true, Activation::HardSwish},
    };
    cfg.feature_dim = 64;
    return cfg;
}

int se_reduced_width(int expansion_channels) {
    return std::max(1, expansion_channels / 4);
}

ad::Tensor hard_swish(const ad::Tensor& x) {
    return ad::scalar_mul(ad::mul(x, ad::relu6(ad::add(x, ad::Tensor::scalar(3.0f)))),
                          1.0f / 6.0f);
}

ad::Tensor hard_sigmoid(const ad::Tensor& x) {
    return ad::scalar_mul(ad::relu6(ad::add(x, ad::Tensor::scalar(3.0f))), 1.0f / 6.0f);
}

ad::Tensor batch_norm(const ad::Tensor& x, BatchNormState& bn, Mode mode, double momentum,
                      double eps) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("batch_norm: expected 4-D input, got " + ad::shape_str(s));
    const int c = s[1];
    if (bn.scale.numel() != static_cast<std::size_t>(c))
        throw ShapeError("batch_norm: " + std::to_string(c) + " channels vs " +
                         std::to_string(bn.scale.numel()) + " parameters");

    ad::Tensor mean_t({1, c, 1, 1});
    ad::Tensor inv_t({1, c, 1, 1});
    if (mode == Mode::Train) {
        // Batch statistics enter the graph as constants; the backward pass
        // treats them as fixed, matching the eval-mode formula.
        const int n = s[0], h = s[2], w = s[3];
        const std::size_t hw = static_cast<std::size_t>(h) * w;
        const std::size_t per_channel = static_cast<std::size_t>(n) * hw;
        auto xd = x.data();
        for (int ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (int b = 0; b < n; ++b) {
                const float* base = xd.data() + ((static_cast<std::size_t>(b) * c + ch) * hw);
                for (std::size_t i = 0; i < hw; ++i) sum += base[i];
            }
            const double mean = sum / static_cast<double>(per_channel);
            double var_sum = 0.0;
            for (int b = 0; b < n; ++b) {
                const float* base = xd.data() + ((static_cast<std::size_t>(b) * c + ch) * hw);
                for (std::size_t i = 0; i < hw; ++i) {
                    const double d = base[i] - mean;
                    var_sum += d * d;
                }
            }
            const double var = var_sum / static_cast<double>(per_channel);
            mean_t.data()[ch] = static_cast<float>(mean);
            inv_t.data()[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
            bn.running_mean.data()[ch] =
                static_cast<float>((1.0 - momentum) * bn.running_mean.data()[ch] + momentum * mean);
            bn.running_var.data()[ch] =
                static_cast<float>((1.0 - momentum) * bn.running_var.data()[ch] + momentum * var);
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean_t.data()[ch] = bn.running_mean.data()[ch];
            inv_t.data()[ch] =
                static_cast<float>(1.0 / std::sqrt(static_cast<double>(bn.running_var.data()[ch]) + eps));
        }
    }
    ad::Tensor xhat = ad::mul(ad::sub(x, mean_t), inv_t);
    return ad::add(ad::mul(xhat, bn.scale), bn.shift);
}

ad::Tensor se_block(const ad::Tensor& x, const ad::Tensor& w1, const ad::Tensor& b1,
                    const ad::Tensor& w2, const ad::Tensor& b2) {
    const auto& s = x.shape();
    if (s.size() != 4) throw ShapeError("se_block: expected 4-D input, got " + ad::shape_str(s));
    ad::Tensor squeezed = ad::global_mean(x);                       // [N,C]
    ad::Tensor hidden = ad::relu6(ad::add(ad::matmul(squeezed, w1), b1));
    ad::Tensor gate = hard_sigmoid(ad::add(ad::matmul(hidden, w2), b2));  // [N,C]
    ad::Tensor gate4 = ad::reshape(gate, {s[0], s[1], 1, 1});
    return ad::mul(x, gate4);
}

namespace {

ad::Tensor& param(Params& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("missing parameter: " + name);
    return it->second;
}

BatchNormState bn_state(Params& params, const std::string& prefix) {
    return BatchNormState{param(params, prefix + ".scale"), param(params, prefix + ".shift"),
                          param(params, prefix + ".rmean"), param(params, prefix + ".rvar")};
}

ad::Tensor activate(const ad::Tensor& x, Activation act) {
    return act == Activation::HardSwish ? hard_swish(x) : ad::relu6(x);
}

}  // namespace

ad::Tensor ds_block(const ad::Tensor& x, const BlockSpec& spec, Params& params,
                    const std::string& prefix, Mode mode) {
    try {
        const int in_channels = x.shape().size() == 4 ? x.shape()[1] : -1;
        ad::Tensor h = ad::conv2d(x, param(params, prefix + ".expand.conv"), 1, 0, 1);
        BatchNormState bn1 = bn_state(params, prefix + ".expand.bn");
        h = activate(batch_norm(h, bn1, mode), spec.activation);

        BatchNormState bn2 = bn_state(params, prefix + ".dw.bn");
        h = ad::conv2d(h, param(params, prefix + ".dw.conv"), spec.stride,
                       spec.kernel_size / 2, spec.expansion_channels);
        h = activate(batch_norm(h, bn2, mode), spec.activation);

        if (spec.use_se)
            h = se_block(h, param(params, prefix + ".se.w1"), param(params, prefix + ".se.b1"),
                         param(params, prefix + ".se.w2"), param(params, prefix + ".se.b2"));

        h = ad::conv2d(h, param(params, prefix + ".project.conv"), 1, 0, 1);
        BatchNormState bn3 = bn_state(params, prefix + ".project.bn");
        h = batch_norm(h, bn3, mode);

        if (spec.stride == 1 && in_channels == spec.out_channels) h = ad::add(h, x);
        return h;
    } catch (const ShapeError& e) {
        throw ShapeError(prefix + ": " + e.what());
    }
}

ad::Tensor backbone_forward(const BackboneConfig& cfg, Params& params, const ad::Tensor& batch,
                            Mode mode) {
    cfg.validate();
    const auto& s = batch.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != cfg.input_side || s[3] != cfg.input_side)
        throw ShapeError("backbone_forward: expected [N,3," + std::to_string(cfg.input_side) +
                         "," + std::to_string(cfg.input_side) + "], got " + ad::shape_str(s));

    ad::Tensor h = ad::conv2d(batch, param(params, "stem.conv"), 2, 1, 1);
    BatchNormState stem_bn = bn_state(params, "stem.bn");
    h = hard_swish(batch_norm(h, stem_bn, mode));

    for (std::size_t i = 0; i < cfg.blocks.size(); ++i)
        h = ds_block(h, cfg.blocks[i], params, "block" + std::to_string(i), mode);

    ad::Tensor pooled = ad::global_mean(h);  // [N, C_last]
    ad::Tensor features =
        ad::add(ad::matmul(pooled, param(params, "head.weight")), param(params, "head.bias"));
    return hard_swish(features);
}

std::vector<std::pair<std::string, std::vector<int>>> param_shapes(const BackboneConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, std::vector<int>>> out;
    auto bn_shapes = [&](const std::string& prefix, int c) {
        out.push_back({prefix + ".scale", {1, c, 1, 1}});
        out.push_back({prefix + ".shift", {1, c, 1, 1}});
        out.push_back({prefix + ".rmean", {1, c, 1, 1}});
        out.push_back({prefix + ".rvar", {1, c, 1, 1}});
    };

    out.push_back({"stem.conv", {cfg.stem_channels, 3, 3, 3}});
    bn_shapes("stem.bn", cfg.stem_channels);

    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const BlockSpec& b = cfg.blocks[i];
        const std::string p = "block" + std::to_string(i);
        const int cin = cfg.channels_into(i);
        out.push_back({p + ".expand.conv", {b.expansion_channels, cin, 1, 1}});
        bn_shapes(p + ".expand.bn", b.expansion_channels);
        out.push_back({p + ".dw.conv", {b.expansion_channels, 1, b.kernel_size, b.kernel_size}});
        bn_shapes(p + ".dw.bn", b.expansion_channels);
        if (b.use_se) {
            const int r = se_reduced_width(b.expansion_channels);
            out.push_back({p + ".se.w1", {b.expansion_channels, r}});
            out.push_back({p + ".se.b1", {1, r}});
            out.push_back({p + ".se.w2", {r, b.expansion_channels}});
            out.push_back({p + ".se.b2", {1, b.expansion_channels}});
        }
        out.push_back({p + ".project.conv", {b.out_channels, b.expansion_channels, 1, 1}});
        bn_shapes(p + ".project.bn", b.out_channels);
    }

    const int c_last = cfg.channels_into(cfg.blocks.size());
    out.push_back({"head.weight", {c_last, cfg.feature_dim}});
    out.push_back({"head.bias", {1, cfg.feature_dim}});
    return out;
}

namespace {

bool is_buffer(const std::string& name) {
    return name.ends_with(".rmean") || name.ends_with(".rvar");
}

// Fan-in of a weight tensor: conv kernels use per-group channel * kh * kw,
// dense weights use the input width.
std::size_t fan_in(const std::vector<int>& shape) {
    if (shape.size() == 4)
        return static_cast<std::size_t>(shape[1]) * shape[2] * shape[3];
    if (shape.size() == 2) return static_cast<std::size_t>(shape[0]);
    return 1;
}

}  // namespace

Params init_params(const BackboneConfig& cfg, Rng& rng) {
    Params params;
    for (const auto& [name, shape] : param_shapes(cfg)) {
        ad::Tensor t(shape);
        if (is_buffer(name)) {
            if (name.ends_with(".rvar")) std::fill(t.data().begin(), t.data().end(), 1.0f);
        } else if (name.ends_with(".scale")) {
            std::fill(t.data().begin(), t.data().end(), 1.0f);
            t.set_requires_grad(true);
        } else if (name.ends_with(".shift") || name.ends_with(".b1") || name.ends_with(".b2") ||
                   name.ends_with(".bias")) {
            t.set_requires_grad(true);  // zero init
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(shape)));
            for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
            t.set_requires_grad(true);
        }
        params.emplace(name, std::move(t));
    }
    return params;
}

std::size_t trainable_param_count(const BackboneConfig& cfg) {
    std::size_t n = 0;
    for (const auto& [name, shape] : param_shapes(cfg))
        if (!is_buffer(name)) n += ad::shape_numel(shape);
    return n;
}

}  // namespace retriage::nn
