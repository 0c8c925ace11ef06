#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ldrc/gradcheck.hpp"
#include "ldrc/model.hpp"
#include "ldrc/ops.hpp"
#include "ldrc/rng.hpp"

using namespace ldrc;

namespace {

void fill_zero(Tensor t) {
    std::fill(t.values().begin(), t.values().end(), 0.0f);
}

ModelConfig small_cfg(Ablation a = Ablation::Full) {
    ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.rdb_growth = 4;
    cfg.ablation = a;
    return cfg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.values().size(); ++i)
        worst = std::max(worst, std::abs(double(a.values()[i]) - b.values()[i]));
    return worst;
}

}  // namespace

TEST_CASE("channel attention: zeroed expand conv gates everything at 0.5") {
    Rng rng(1);
    ChannelAttention ca(8, 4, rng);
    fill_zero(ca.expand.weight);
    fill_zero(ca.expand.bias);
    Tensor x = random_tensor({2, 8, 6, 6}, rng, -1.0f, 1.0f, false);
    Tensor y = ca.forward(x);
    CHECK(y.shape() == x.shape());
    for (size_t i = 0; i < x.values().size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(0.5f * x.values()[i]));
}

TEST_CASE("channel attention: shape preserved, gates in (0,1)") {
    Rng rng(2);
    ChannelAttention ca(16, 4, rng);
    Tensor x = random_tensor({2, 16, 8, 8}, rng, 0.5f, 1.0f, false);
    Tensor y = ca.forward(x);
    CHECK(y.shape() == Shape4{2, 16, 8, 8});
    // y = gate*x with x > 0: the gate is recoverable and must be in (0,1)
    for (size_t i = 0; i < x.values().size(); ++i) {
        float gate = y.values()[i] / x.values()[i];
        CHECK(gate > 0.0f);
        CHECK(gate < 1.0f);
    }
    CHECK_THROWS_WITH_AS(ChannelAttention(10, 4, rng), doctest::Contains("divisible"), Error);
}

TEST_CASE("multi-path block: identity at init, dims preserved, branch count") {
    Rng rng(3);
    MultiPathBlock mpb(16, {2, 4}, 4, rng);
    CHECK(mpb.branch_count() == 4);
    Tensor x = random_tensor({1, 16, 32, 32}, rng, -1.0f, 1.0f, false);
    Tensor y = mpb.forward(x);
    CHECK(y.shape() == Shape4{1, 16, 32, 32});
    // fuse conv is zero-initialized: the block starts as a pure residual
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("residual dense block: identity at init, concat width audit") {
    Rng rng(4);
    ResidualDenseBlock rdb(16, 8, rng);
    CHECK(rdb.concat_width() == 16 + 3 * 8);
    Tensor x = random_tensor({1, 16, 8, 8}, rng, -1.0f, 1.0f, false);
    Tensor y = rdb.forward(x);
    CHECK(y.shape() == x.shape());
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("msi block: output shape, composition oracle, deg independence") {
    Rng rng(5);
    MsiBlock msi(8, 16, {1, 2}, 4, rng);
    Tensor f = random_tensor({1, 8, 6, 6}, rng, -1.0f, 1.0f, false);
    Tensor deg = random_tensor({1, 16, 6, 6}, rng, -1.0f, 1.0f, false);
    Tensor y = msi.forward(f, deg);
    CHECK(y.shape() == f.shape());

    SUBCASE("attention at 0.5 and identity chains make it a linear map of the primitives") {
        fill_zero(msi.attention.expand.weight);
        fill_zero(msi.attention.expand.bias);
        // residual chains collapse to identities when their first convs are
        // zeroed (conv2 of each block is zero-initialized already)
        for (auto& chain : msi.chains)
            for (auto& rb : chain) {
                fill_zero(rb.conv1.weight);
                fill_zero(rb.conv1.bias);
            }
        Tensor got = msi.forward(f, deg);
        // hand-composed from the primitive ops
        Tensor fc = scale(concat_channels({msi.align_main.forward(f), msi.align_deg.forward(deg)}),
                          0.5f);
        Tensor expect = msi.project.forward(concat_channels({fc, fc}));
        CHECK(max_abs_diff(got, expect) < 1e-6);
    }

    SUBCASE("zeroed deg-side alignment makes the block ignore deg") {
        fill_zero(msi.align_deg.weight);
        fill_zero(msi.align_deg.bias);
        Tensor y1 = msi.forward(f, deg);
        Tensor other = random_tensor({1, 16, 6, 6}, rng, -1.0f, 1.0f, false);
        Tensor y2 = msi.forward(f, other);
        CHECK(max_abs_diff(y1, y2) == 0.0);
    }

    SUBCASE("spatial mismatch is an error") {
        Tensor bad = random_tensor({1, 16, 5, 6}, rng, -1.0f, 1.0f, false);
        CHECK_THROWS_WITH_AS(msi.forward(f, bad), doctest::Contains("spatial"), Error);
    }
}

TEST_CASE("encoder emits the three-scale degradation contract") {
    Rng rng(6);
    ModelConfig cfg;  // base 16
    DAEncoder enc(cfg, rng);
    Tensor r = random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f, false);
    DegradationRep rep = enc.forward(r);
    CHECK(rep.deg1.shape() == Shape4{1, 16, 64, 64});
    CHECK(rep.deg2.shape() == Shape4{1, 32, 32, 32});
    CHECK(rep.deg3.shape() == Shape4{1, 64, 16, 16});

    CHECK_THROWS_WITH_AS(enc.forward(random_tensor({1, 3, 62, 64}, rng, 0.0f, 1.0f, false)),
                         doctest::Contains("divisible"), Error);
    CHECK_THROWS_WITH_AS(enc.forward(random_tensor({1, 4, 64, 64}, rng, 0.0f, 1.0f, false)),
                         doctest::Contains("3-channel"), Error);
}

TEST_CASE("encoder at init equals its vanilla-conv twin (zero-offset start)") {
    // the offset predictors are zero-initialized and draw nothing from the
    // rng, so a Full encoder and an S4 encoder built from the same seed hold
    // identical conv weights
    Rng rng_a(77), rng_b(77);
    DAEncoder full(small_cfg(Ablation::Full), rng_a);
    DAEncoder vanilla(small_cfg(Ablation::S4), rng_b);
    CHECK(full.deform_layer_count() == 6);
    CHECK(vanilla.deform_layer_count() == 0);
    Rng rng(8);
    Tensor r = random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f, false);
    DegradationRep a = full.forward(r);
    DegradationRep b = vanilla.forward(r);
    CHECK(max_abs_diff(a.deg1, b.deg1) < 1e-5);
    CHECK(max_abs_diff(a.deg2, b.deg2) < 1e-5);
    CHECK(max_abs_diff(a.deg3, b.deg3) < 1e-5);
}

TEST_CASE("derain net: shape contract and deg pairing by resolution") {
    Rng rng(9);
    ModelConfig cfg = small_cfg();
    Model model(cfg, 123);
    Tensor r = random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f, false);
    Tensor bhat = model.restore(r);
    CHECK(bhat.shape() == Shape4{1, 3, 64, 64});

    // divisible by 4 but not by 8: exercises the crop path at the deepest level
    Tensor r20 = random_tensor({1, 3, 20, 28}, rng, 0.0f, 1.0f, false);
    CHECK(model.restore(r20).shape() == Shape4{1, 3, 20, 28});
}

TEST_CASE("parameter count: Full differs from S4 exactly by the offset predictors") {
    Model full(small_cfg(Ablation::Full), 5);
    Model s4(small_cfg(Ablation::S4), 5);
    auto count = [](const Model& m) {
        std::int64_t n = 0;
        for (const auto& [name, t] : m.parameters()) n += t.numel();
        return n;
    };
    std::int64_t predictor = 0;
    for (const auto& [name, t] : full.parameters())
        if (name.find("offset_predictor") != std::string::npos) predictor += t.numel();
    CHECK(predictor > 0);
    CHECK(count(full) - count(s4) == predictor);
}

TEST_CASE("constraint net: shape, wiring, and B-only dependence with zeroed fusion") {
    Rng rng(10);
    ModelConfig cfg = small_cfg();
    Model model(cfg, 321);
    Tensor r = random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f, false);
    Tensor b = random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f, false);
    DegradationRep deg = model.encode(r);
    Tensor rhat = model.reconstruct_rain(b, deg);
    CHECK(rhat.shape() == Shape4{1, 3, 32, 32});

    // L_C is finite and differentiable w.r.t. encoder parameters
    for (auto& [name, t] : model.parameters()) t.zero_grad();
    Tensor loss = mse_loss(model.reconstruct_rain(b, model.encode(r)), r);
    CHECK(std::isfinite(loss.item()));
    backward(loss);
    double enc_grad = 0.0;
    for (const auto& [name, t] : model.parameters())
        if (name.starts_with("encoder.stem"))
            for (float g : t.grad()) enc_grad += std::abs(g);
    CHECK(enc_grad > 0.0);

    // zero every deg-facing fusion path: the reconstruction must then depend
    // only on the clean image
    ConstraintNet& c = *model.constraint;
    for (auto* msi : {&*c.msi_full, &*c.msi_half, &*c.msi_quarter}) {
        fill_zero(msi->align_deg.weight);
        fill_zero(msi->align_deg.bias);
    }
    DegradationRep other = model.encode(random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f, false));
    CHECK(max_abs_diff(model.reconstruct_rain(b, deg), model.reconstruct_rain(b, other)) == 0.0);
}

TEST_CASE("s1 head: shape, zero-head identity, gradient reaches the encoder") {
    Rng rng(11);
    Model model(small_cfg(Ablation::S1), 99);
    Tensor r = random_tensor({1, 3, 32, 32}, rng, 0.2f, 0.8f, false);
    Tensor bhat = model.restore(r);
    CHECK(bhat.shape() == Shape4{1, 3, 32, 32});

    // zero head weights -> zero residual -> output equals the input
    fill_zero(model.head->conv1.weight);
    fill_zero(model.head->conv1.bias);
    fill_zero(model.head->conv2.weight);
    fill_zero(model.head->conv2.bias);
    CHECK(max_abs_diff(model.restore(r), r) == 0.0);

    Model fresh(small_cfg(Ablation::S1), 100);
    for (auto& [name, t] : fresh.parameters()) t.zero_grad();
    backward(mse_loss(fresh.restore(r), Tensor({1, 3, 32, 32}, 0.5f)));
    double enc_grad = 0.0;
    for (const auto& [name, t] : fresh.parameters())
        if (name.starts_with("encoder."))
            for (float g : t.grad()) enc_grad += std::abs(g);
    CHECK(enc_grad > 0.0);
}

TEST_CASE("ablation structural audits") {
    auto a_full = Model(small_cfg(Ablation::Full), 1).audit();
    CHECK(a_full.deform_layers == 6);
    CHECK(a_full.msi_blocks == 6);  // three decoder levels + three constraint sites
    CHECK(a_full.has_encoder);
    CHECK(a_full.has_constraint);

    auto a_s1 = Model(small_cfg(Ablation::S1), 1).audit();
    CHECK(a_s1.has_head);
    CHECK_FALSE(a_s1.has_derain);
    CHECK(a_s1.has_encoder);
    CHECK(a_s1.has_constraint);

    auto a_s2 = Model(small_cfg(Ablation::S2), 1).audit();
    CHECK_FALSE(a_s2.has_encoder);
    CHECK_FALSE(a_s2.has_constraint);
    CHECK(a_s2.msi_blocks == 0);
    CHECK(a_s2.deform_layers == 0);

    auto a_s3 = Model(small_cfg(Ablation::S3), 1).audit();
    CHECK(a_s3.has_encoder);
    CHECK_FALSE(a_s3.has_constraint);
    CHECK(a_s3.msi_blocks == 3);  // derain side only

    auto a_s4 = Model(small_cfg(Ablation::S4), 1).audit();
    CHECK(a_s4.deform_layers == 0);
    CHECK(a_s4.has_encoder);

    auto a_s5 = Model(small_cfg(Ablation::S5), 1).audit();
    CHECK(a_s5.msi_blocks == 0);
    CHECK(a_s5.has_encoder);
    CHECK(a_s5.has_constraint);
}

TEST_CASE("every ablation runs forward and backward with finite results at 32x32") {
    Rng rng(12);
    Tensor r = random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f, false);
    Tensor b = random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f, false);
    for (Ablation a : {Ablation::Full, Ablation::S1, Ablation::S2, Ablation::S3, Ablation::S4,
                       Ablation::S5}) {
        CAPTURE(ablation_name(a));
        Model model(small_cfg(a), 7);
        Tensor bhat = model.restore(r);
        Tensor loss = mse_loss(bhat, b);
        if (model.constraint) {
            DegradationRep deg = model.encode(r);
            loss = add(loss, mse_loss(model.reconstruct_rain(b, deg), r));
        }
        CHECK(std::isfinite(loss.item()));
        backward(loss);  // NaN policy would throw on non-finite activations
        for (const auto& [name, t] : model.parameters()) {
            if (t.grad().empty()) continue;
            for (float g : t.grad()) {
                if (!std::isfinite(g)) {
                    CAPTURE(name);
                    REQUIRE(std::isfinite(g));
                }
            }
        }
    }
}

TEST_CASE("model config serialization round trip and validation") {
    ModelConfig cfg;
    cfg.base_channels = 24;
    cfg.rdb_growth = 12;
    cfg.mpb_dilations = {1, 2, 3};
    cfg.ablation = Ablation::S5;
    ModelConfig back = ModelConfig::parse(cfg.serialize());
    CHECK(back.base_channels == 24);
    CHECK(back.mpb_dilations == std::vector<int>{1, 2, 3});
    CHECK(back.ablation == Ablation::S5);

    // rdb_growth follows base_channels unless given explicitly
    ModelConfig d1 = ModelConfig::parse("base_channels=32\n");
    CHECK(d1.rdb_growth == 16);
    ModelConfig d2 = ModelConfig::parse("base_channels=32\nrdb_growth=5\n");
    CHECK(d2.rdb_growth == 5);

    CHECK_THROWS_WITH_AS(ModelConfig::parse("num_scales=2\n"), doctest::Contains("fixed"), Error);
    CHECK_THROWS_WITH_AS(ModelConfig::parse("bogus_key=1\n"), doctest::Contains("unknown"), Error);
    CHECK_THROWS_AS(ModelConfig::parse("base_channels=oops\n"), Error);
}

TEST_CASE("finite-difference suite: arch blocks and end-to-end") {
    auto results = run_gradchecks("arch", 1, 555);
    CHECK(results.size() == 5);
    for (const auto& r : results) {
        INFO(r.op, " worst rel err ", r.worst, " threshold ", r.threshold);
        CHECK(r.pass);
    }
}

TEST_CASE("reflective padding helper") {
    Tensor x({1, 1, 3, 5}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
    Tensor p = pad_reflect_to_multiple(x, 4);
    CHECK(p.shape() == Shape4{1, 1, 4, 8});
    // row 3 mirrors row 1 (reflect without repeating the border row)
    CHECK(p.at(0, 0, 3, 0) == x.at(0, 0, 1, 0));
    // column 5,6,7 mirror columns 3,2,1
    CHECK(p.at(0, 0, 0, 5) == x.at(0, 0, 0, 3));
    CHECK(p.at(0, 0, 0, 6) == x.at(0, 0, 0, 2));
    CHECK(p.at(0, 0, 0, 7) == x.at(0, 0, 0, 1));
    // already aligned input is returned as-is
    Tensor a({1, 1, 4, 4}, 0.0f);
    CHECK(pad_reflect_to_multiple(a, 4).shape() == Shape4{1, 1, 4, 4});
}
