#pragma once

#include <map>
#include <string>
#include <vector>

#include "retriage/autodiff.hpp"
#include "retriage/rng.hpp"

namespace retriage::nn {

enum class Mode { Train, Eval };
enum class Activation { Relu6, HardSwish };

struct BlockSpec {
    int expansion_channels = 0;
    int out_channels = 0;
    int kernel_size = 3;
    int stride = 1;
    bool use_se = true;
    Activation activation = Activation::HardSwish;
};

/// Config-driven feature extractor: stem conv (3x3, stride 2) + batch norm
/// + hard-swish, the listed blocks, global spatial mean, then a dense
/// projection to feature_dim finished with hard-swish.
struct BackboneConfig {
    int input_side = 64;
    int stem_channels = 8;
    std::vector<BlockSpec> blocks;
    int feature_dim = 64;

    void validate() const;  // throws ValidationError

    /// Channels entering block `i` (i == blocks.size() gives the channels
    /// entering the dense head).
    int channels_into(std::size_t i) const;

    /// Desk-scale preset exercising depthwise, SE, hard-swish and the
    /// residual path while staying under 100k parameters.
    static BackboneConfig tiny(int input_side = 64);
};

/// Named parameter/buffer store. Trainable tensors carry requires_grad;
/// batch-norm running stats are plain buffers.
using Params = std::map<std::string, autodiff::Tensor>;

/// x * relu6(x + 3) / 6.
autodiff::Tensor hard_swish(const autodiff::Tensor& x);

/// relu6(x + 3) / 6.
autodiff::Tensor hard_sigmoid(const autodiff::Tensor& x);

struct BatchNormState {
    autodiff::Tensor scale;         // [1,C,1,1], trainable
    autodiff::Tensor shift;         // [1,C,1,1], trainable
    autodiff::Tensor running_mean;  // [1,C,1,1], buffer
    autodiff::Tensor running_var;   // [1,C,1,1], buffer
};

/// Train mode normalizes by the batch statistics (entering the graph as
/// constants) and updates the running stats in place with `momentum`;
/// eval mode normalizes by the running stats. out = scale * xhat + shift.
autodiff::Tensor batch_norm(const autodiff::Tensor& x, BatchNormState& bn, Mode mode,
                            double momentum = 0.1, double eps = 1e-5);

/// Squeeze-and-excite: per-channel global mean, bottleneck MLP, hard-
/// sigmoid gate multiplying the input channels.
autodiff::Tensor se_block(const autodiff::Tensor& x, const autodiff::Tensor& w1,
                          const autodiff::Tensor& b1, const autodiff::Tensor& w2,
                          const autodiff::Tensor& b2);

/// Expansion (1x1) -> BN -> act -> depthwise -> BN -> act -> optional SE ->
/// projection (1x1) -> BN, with a residual add when stride is 1 and channel
/// counts match. Shape errors name the block via `prefix`.
autodiff::Tensor ds_block(const autodiff::Tensor& x, const BlockSpec& spec, Params& params,
                          const std::string& prefix, Mode mode);

/// batch [N,3,S,S] -> features [N,feature_dim]. Deterministic in eval mode.
autodiff::Tensor backbone_forward(const BackboneConfig& cfg, Params& params,
                                  const autodiff::Tensor& batch, Mode mode);

/// Canonical (name, shape) list declared by a config, in structural order.
std::vector<std::pair<std::string, std::vector<int>>> param_shapes(const BackboneConfig& cfg);

/// Fan-in-scaled uniform init for convs and dense weights, scale 1 /
/// shift 0 for batch norm; draw order follows param_shapes.
Params init_params(const BackboneConfig& cfg, Rng& rng);

/// Number of trainable scalars (running stats excluded).
std::size_t trainable_param_count(const BackboneConfig& cfg);

/// SE bottleneck width for an expansion width.
int se_reduced_width(int expansion_channels);

}  // namespace retriage::nn
