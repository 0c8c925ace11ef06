#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ldrc/nn.hpp"

namespace ldrc {

// Ablation switches:
//   Full - encoder + constraint net + derain net with interaction blocks
//   S1   - no derain net; convolutions map the degradation features to a
//          rain residual, output = input - residual
//   S2   - derain net only (no encoder, no constraint net, no interaction)
//   S3   - full structure minus the constraint net; the encoder stays at its
//          random init and is trained frozen
//   S4   - every deformable layer replaced by a vanilla convolution
//   S5   - every interaction block replaced by concat + 1x1 fusion
enum class Ablation { Full, S1, S2, S3, S4, S5 };

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct ModelConfig {
    int base_channels = 16;
    int num_scales = 3;  // the three-scale degradation contract is fixed
    std::vector<int> mpb_dilations = {2, 4};
    int rdb_count = 3;
    int rdb_growth = 8;  // defaults to base_channels / 2
    std::vector<int> msib_rb_depths = {1, 2};
    int ca_reduction = 4;
    Ablation ablation = Ablation::Full;

    void validate() const;
    std::string serialize() const;  // flat key=value lines
    static ModelConfig parse(const std::string& text);

    // Apply one key=value override; unknown keys are errors.
    void set(const std::string& key, const std::string& value);
};

// Multi-scale content-independent degradation features: full, 1/2 and 1/4
// resolution with base, 2*base and 4*base channels.
struct DegradationRep {
    Tensor deg1, deg2, deg3;
};

// Degradation encoder: a conv stem, then per scale two (deformable)
// conv+relu layers; the feature before each stride-2 downsample is emitted
// as that scale's degradation map.
struct DAEncoder {
    ModelConfig cfg;
    Conv2d stem;
    // one entry per scale; exactly one of deform/plain is populated per slot
    std::vector<DeformLayer> deform_layers;
    std::vector<Conv2d> plain_layers;
    std::vector<Conv2d> downs;
    bool use_deform = true;

    DAEncoder(const ModelConfig& cfg, Rng& rng);

    DegradationRep forward(const Tensor& rainy,
                           std::map<std::string, Tensor>* taps = nullptr) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    int deform_layer_count() const { return int(deform_layers.size()); }
};

// Training-only network reconstructing the rainy image from the clean image
// and the degradation features; its loss is what supervises the encoder.
struct ConstraintNet {
    ModelConfig cfg;
    Conv2d stem;
    std::vector<ResidualDenseBlock> rdbs;  // cfg.rdb_count of them
    // full-resolution interaction after the first RDB
    std::optional<MsiBlock> msi_full;
    std::optional<ConcatFuse> cat_full;
    // half-resolution branch after the second RDB
    Conv2d down_half;
    std::optional<MsiBlock> msi_half;
    std::optional<ConcatFuse> cat_half;
    Conv2d up_half;  // zero init, branch is silent at step 0
    // quarter-resolution branch after the last RDB
    Conv2d down_q1, down_q2;
    std::optional<MsiBlock> msi_quarter;
    std::optional<ConcatFuse> cat_quarter;
    Conv2d up_q1, up_q2;  // up_q2 zero init
    Conv2d head;

    ConstraintNet(const ModelConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& clean, const DegradationRep& deg) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    int msi_block_count() const;
};

// U-Net deraining network; the decoder fuses the degradation features at the
// matching resolution through interaction blocks.
struct DerainNet {
    ModelConfig cfg;
    static constexpr int kLevels = 3;
    Conv2d stem;
    std::vector<MultiPathBlock> enc_mpb;
    std::vector<Conv2d> downs;
    MultiPathBlock bottleneck;
    std::vector<Conv2d> up_convs;
    std::vector<Conv2d> skip_fuse;
    std::vector<MsiBlock> msi;        // empty for S2/S5
    std::vector<ConcatFuse> cat_fuse;  // S5 replacement
    std::vector<MultiPathBlock> dec_mpb;
    Conv2d head;
    bool use_deg = true;   // false for S2
    bool use_msi = true;   // false for S2/S5

    DerainNet(const ModelConfig& cfg, Rng& rng);

    // deg may be null only when the net was built without degradation input.
    Tensor forward(const Tensor& rainy, const DegradationRep* deg,
                   std::map<std::string, Tensor>* taps = nullptr) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    int msi_block_count() const { return int(msi.size()); }
};

// S1 head: upsample deg2/deg3 to full resolution, concat with deg1, two 3x3
// convs to a 3-channel rain residual; output = rainy - residual.
struct S1Head {
    Conv2d conv1, conv2;

    S1Head(const ModelConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& rainy, const DegradationRep& deg) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

// The networks wired together per the active ablation.
struct Model {
    ModelConfig cfg;
    std::unique_ptr<DAEncoder> encoder;
    std::unique_ptr<ConstraintNet> constraint;
    std::unique_ptr<DerainNet> derain;
    std::unique_ptr<S1Head> head;

    Model(const ModelConfig& cfg, std::uint64_t seed);

    DegradationRep encode(const Tensor& rainy, std::map<std::string, Tensor>* taps = nullptr) const;

    // Full restoration path as used at inference and in phase-2 training.
    Tensor restore(const Tensor& rainy, std::map<std::string, Tensor>* taps = nullptr) const;

    // Constraint path: reconstruct the rainy image from (clean, deg).
    Tensor reconstruct_rain(const Tensor& clean, const DegradationRep& deg) const;

    ParamMap parameters() const;  // names prefixed encoder./constraint./derain./head.
    void set_encoder_frozen(bool frozen);

    struct Audit {
        int deform_layers = 0;
        int msi_blocks = 0;
        bool has_encoder = false, has_constraint = false, has_derain = false, has_head = false;
    };
    Audit audit() const;
};

// Pads H and W up to a multiple of `multiple` by reflecting interior rows and
// columns, for inference on arbitrary sizes. No-op when already aligned.
Tensor pad_reflect_to_multiple(const Tensor& x, int multiple);

}  // namespace ldrc
