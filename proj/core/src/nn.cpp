#include "ldrc/nn.hpp"

#include <cmath>

#include "ldrc/deform.hpp"

namespace ldrc {

Tensor init_conv_weight(int cout, int cin, int kh, int kw, WeightInit init, Rng& rng) {
    Tensor w({cout, cin, kh, kw});
    if (init == WeightInit::KaimingUniform) {
        double bound = 1.0 / std::sqrt(double(cin) * kh * kw);
        for (auto& v : w.values()) v = float(rng.uniform(-bound, bound));
    }
    w.set_requires_grad(true);
    return w;
}

Tensor init_conv_bias(int cout, int cin, int kh, int kw, WeightInit init, Rng& rng) {
    Tensor b({1, cout, 1, 1});
    if (init == WeightInit::KaimingUniform) {
        double bound = 1.0 / std::sqrt(double(cin) * kh * kw);
        for (auto& v : b.values()) v = float(rng.uniform(-bound, bound));
    }
    b.set_requires_grad(true);
    return b;
}

Conv2d::Conv2d(int cin, int cout, int k, int stride, int padding, int dilation, WeightInit init,
               Rng& rng)
    : weight(init_conv_weight(cout, cin, k, k, init, rng)),
      bias(init_conv_bias(cout, cin, k, k, init, rng)),
      stride(stride),
      padding(padding),
      dilation(dilation) {}

Tensor Conv2d::forward(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, padding, dilation);
}

void Conv2d::collect(const std::string& prefix, ParamMap& out) const {
    out.emplace(prefix + ".weight", weight);
    out.emplace(prefix + ".bias", bias);
}

DeformLayer::DeformLayer(int cin, int cout, int k, int stride, int padding, int dilation,
                         Rng& rng)
    : weight(init_conv_weight(cout, cin, k, k, WeightInit::KaimingUniform, rng)),
      bias(init_conv_bias(cout, cin, k, k, WeightInit::KaimingUniform, rng)),
      stride(stride),
      padding(padding),
      dilation(dilation),
      offset_predictor(cin, offset_channels(k, k), k, stride, padding, dilation,
                       WeightInit::Zero, rng) {}

Tensor DeformLayer::forward(const Tensor& x) const {
    Tensor offsets = offset_predictor.forward(x);
    return deform_conv2d(x, offsets, weight, bias, stride, padding, dilation);
}

void DeformLayer::collect(const std::string& prefix, ParamMap& out) const {
    out.emplace(prefix + ".weight", weight);
    out.emplace(prefix + ".bias", bias);
    offset_predictor.collect(prefix + ".offset_predictor", out);
}

ChannelAttention::ChannelAttention(int channels, int reduction, Rng& rng)
    : channels(channels), reduction(reduction) {
    if (reduction < 1 || channels % reduction != 0)
        throw Error("channel_attention: " + std::to_string(channels) +
                    " channels not divisible by reduction " + std::to_string(reduction));
    squeeze = Conv2d(channels, channels / reduction, 1, 1, 0, 1, WeightInit::KaimingUniform, rng);
    expand = Conv2d(channels / reduction, channels, 1, 1, 0, 1, WeightInit::KaimingUniform, rng);
}

Tensor ChannelAttention::forward(const Tensor& x) const {
    Tensor gate = sigmoid(expand.forward(relu(squeeze.forward(global_avgpool(x)))));
    return scale_channels(x, gate);
}

void ChannelAttention::collect(const std::string& prefix, ParamMap& out) const {
    squeeze.collect(prefix + ".squeeze", out);
    expand.collect(prefix + ".expand", out);
}

ResidualBlock::ResidualBlock(int channels, Rng& rng)
    : conv1(channels, channels, 3, 1, 1, 1, WeightInit::KaimingUniform, rng),
      conv2(channels, channels, 3, 1, 1, 1, WeightInit::Zero, rng) {}

Tensor ResidualBlock::forward(const Tensor& x) const {
    return add(x, conv2.forward(relu(conv1.forward(x))));
}

void ResidualBlock::collect(const std::string& prefix, ParamMap& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
}

MultiPathBlock::MultiPathBlock(int channels, const std::vector<int>& dilations, int ca_reduction,
                               Rng& rng)
    : pointwise(channels, channels, 1, 1, 0, 1, WeightInit::KaimingUniform, rng),
      pool_pointwise(channels, channels, 1, 1, 0, 1, WeightInit::KaimingUniform, rng) {
    for (int rate : dilations) {
        if (rate < 1) throw Error("multi_path_block: dilation rates must be positive");
        dilated.emplace_back(channels, channels, 3, 1, rate, rate, WeightInit::KaimingUniform,
                             rng);
    }
    int cat = channels * branch_count();
    attention = ChannelAttention(cat, ca_reduction, rng);
    fuse = Conv2d(cat, channels, 1, 1, 0, 1, WeightInit::Zero, rng);
}

Tensor MultiPathBlock::forward(const Tensor& x) const {
    std::vector<Tensor> branches;
    branches.reserve(size_t(branch_count()));
    branches.push_back(relu(pointwise.forward(x)));
    branches.push_back(relu(pool_pointwise.forward(avgpool2d(x, 3, 1, 1))));
    for (const auto& conv : dilated) branches.push_back(relu(conv.forward(x)));
    return add(x, fuse.forward(attention.forward(concat_channels(branches))));
}

void MultiPathBlock::collect(const std::string& prefix, ParamMap& out) const {
    pointwise.collect(prefix + ".pointwise", out);
    pool_pointwise.collect(prefix + ".pool_pointwise", out);
    for (size_t i = 0; i < dilated.size(); ++i)
        dilated[i].collect(prefix + ".dilated" + std::to_string(i), out);
    attention.collect(prefix + ".attention", out);
    fuse.collect(prefix + ".fuse", out);
}

ResidualDenseBlock::ResidualDenseBlock(int channels, int growth, Rng& rng)
    : channels(channels), growth(growth) {
    if (growth < 1) throw Error("residual_dense_block: growth must be positive");
    for (int i = 0; i < kDenseLayers; ++i)
        dense.emplace_back(channels + i * growth, growth, 3, 1, 1, 1,
                           WeightInit::KaimingUniform, rng);
    fuse = Conv2d(concat_width(), channels, 1, 1, 0, 1, WeightInit::Zero, rng);
}

Tensor ResidualDenseBlock::forward(const Tensor& x) const {
    std::vector<Tensor> feats{x};
    for (const auto& layer : dense) {
        Tensor in = feats.size() == 1 ? feats[0] : concat_channels(feats);
        feats.push_back(relu(layer.forward(in)));
    }
    return add(x, fuse.forward(concat_channels(feats)));
}

void ResidualDenseBlock::collect(const std::string& prefix, ParamMap& out) const {
    for (size_t i = 0; i < dense.size(); ++i)
        dense[i].collect(prefix + ".dense" + std::to_string(i), out);
    fuse.collect(prefix + ".fuse", out);
}

MsiBlock::MsiBlock(int channels, int deg_channels, const std::vector<int>& rb_depths,
                   int ca_reduction, Rng& rng)
    : align_main(channels, channels, 1, 1, 0, 1, WeightInit::KaimingUniform, rng),
      align_deg(deg_channels, channels, 1, 1, 0, 1, WeightInit::KaimingUniform, rng) {
    if (rb_depths.empty()) throw Error("msi_block: need at least one residual chain");
    int cat = 2 * channels;
    attention = ChannelAttention(cat, ca_reduction, rng);
    for (int depth : rb_depths) {
        if (depth < 1) throw Error("msi_block: chain depths must be positive");
        std::vector<ResidualBlock> chain;
        for (int i = 0; i < depth; ++i) chain.emplace_back(cat, rng);
        chains.push_back(std::move(chain));
    }
    project = Conv2d(cat * int(chains.size()), channels, 1, 1, 0, 1,
                     WeightInit::KaimingUniform, rng);
}

Tensor MsiBlock::forward(const Tensor& main, const Tensor& deg) const {
    const Shape4& ms = main.shape();
    const Shape4& ds = deg.shape();
    if (ms.h != ds.h || ms.w != ds.w)
        throw Error("msi_block: spatial mismatch between feature " + ms.str() +
                    " and degradation " + ds.str());
    Tensor fc = attention.forward(
        concat_channels({align_main.forward(main), align_deg.forward(deg)}));
    std::vector<Tensor> outs;
    outs.reserve(chains.size());
    for (const auto& chain : chains) {
        Tensor t = fc;
        for (const auto& rb : chain) t = rb.forward(t);
        outs.push_back(t);
    }
    return project.forward(concat_channels(outs));
}

void MsiBlock::collect(const std::string& prefix, ParamMap& out) const {
    align_main.collect(prefix + ".align_main", out);
    align_deg.collect(prefix + ".align_deg", out);
    attention.collect(prefix + ".attention", out);
    for (size_t i = 0; i < chains.size(); ++i)
        for (size_t j = 0; j < chains[i].size(); ++j)
            chains[i][j].collect(prefix + ".chain" + std::to_string(i) + ".rb" + std::to_string(j),
                                 out);
    project.collect(prefix + ".project", out);
}

ConcatFuse::ConcatFuse(int channels, int deg_channels, Rng& rng)
    : fuse(channels + deg_channels, channels, 1, 1, 0, 1, WeightInit::KaimingUniform, rng) {}

Tensor ConcatFuse::forward(const Tensor& main, const Tensor& deg) const {
    return fuse.forward(concat_channels({main, deg}));
}

void ConcatFuse::collect(const std::string& prefix, ParamMap& out) const {
    fuse.collect(prefix + ".fuse", out);
}

}  // namespace ldrc
