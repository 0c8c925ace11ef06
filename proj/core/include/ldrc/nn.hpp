#pragma once

#include <string>
#include <vector>

#include "ldrc/ops.hpp"
#include "ldrc/rng.hpp"
#include "ldrc/tensor.hpp"

namespace ldrc {

enum class WeightInit { KaimingUniform, Zero };

// Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); Zero is used for
// offset predictors and the final conv of residual paths so blocks start as
// identities.
Tensor init_conv_weight(int cout, int cin, int kh, int kw, WeightInit init, Rng& rng);
Tensor init_conv_bias(int cout, int cin, int kh, int kw, WeightInit init, Rng& rng);

struct Conv2d {
    Tensor weight;  // [Cout, Cin, k, k]
    Tensor bias;    // [1, Cout, 1, 1]
    int stride = 1, padding = 0, dilation = 1;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int padding, int dilation, WeightInit init,
           Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    std::int64_t param_count() const { return weight.numel() + bias.numel(); }
};

// Standard conv with a zero-initialized companion conv predicting the
// per-location sampling offsets from the input; starts out exactly equal to
// the plain convolution.
struct DeformLayer {
    Tensor weight;
    Tensor bias;
    int stride = 1, padding = 0, dilation = 1;
    Conv2d offset_predictor;

    DeformLayer() = default;
    DeformLayer(int cin, int cout, int k, int stride, int padding, int dilation, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

// Squeeze-excite gating: gap -> 1x1 (C -> C/r) -> relu -> 1x1 (C/r -> C)
// -> sigmoid, applied multiplicatively per channel.
struct ChannelAttention {
    Conv2d squeeze, expand;
    int channels = 0, reduction = 0;

    ChannelAttention() = default;
    ChannelAttention(int channels, int reduction, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

// conv3x3 -> relu -> conv3x3 (zero init) + skip.
struct ResidualBlock {
    Conv2d conv1, conv2;

    ResidualBlock() = default;
    ResidualBlock(int channels, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

// Multi-path block: parallel 1x1, avgpool+1x1 and one dilated 3x3 per rate,
// concatenated under channel attention, fused back to the block width and
// added to the input.
struct MultiPathBlock {
    Conv2d pointwise;
    Conv2d pool_pointwise;
    std::vector<Conv2d> dilated;
    ChannelAttention attention;
    Conv2d fuse;  // zero init: the block starts as an identity

    MultiPathBlock() = default;
    MultiPathBlock(int channels, const std::vector<int>& dilations, int ca_reduction, Rng& rng);

    int branch_count() const { return 2 + int(dilated.size()); }
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

// Residual dense block: three 3x3+relu layers each consuming the concat of
// everything before them, a 1x1 local fusion back to the input width (zero
// init) and a skip.
struct ResidualDenseBlock {
    static constexpr int kDenseLayers = 3;
    std::vector<Conv2d> dense;
    Conv2d fuse;
    int channels = 0, growth = 0;

    ResidualDenseBlock() = default;
    ResidualDenseBlock(int channels, int growth, Rng& rng);

    int concat_width() const { return channels + kDenseLayers * growth; }
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

// Multi-scale interaction block: aligns the main feature and the degradation
// feature to a common width, gates the concat with channel attention, runs
// parallel residual-block chains of configured depths on it, concatenates
// the chain outputs and projects back to the main width.
struct MsiBlock {
    Conv2d align_main, align_deg;
    ChannelAttention attention;
    std::vector<std::vector<ResidualBlock>> chains;
    Conv2d project;

    MsiBlock() = default;
    MsiBlock(int channels, int deg_channels, const std::vector<int>& rb_depths, int ca_reduction,
             Rng& rng);

    Tensor forward(const Tensor& main, const Tensor& deg) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

// Plain concat + 1x1 fusion; the interaction-free stand-in for MsiBlock.
struct ConcatFuse {
    Conv2d fuse;

    ConcatFuse() = default;
    ConcatFuse(int channels, int deg_channels, Rng& rng);

    Tensor forward(const Tensor& main, const Tensor& deg) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

}  // namespace ldrc
