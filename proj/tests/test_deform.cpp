#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ldrc/deform.hpp"
#include "ldrc/gradcheck.hpp"
#include "ldrc/nn.hpp"
#include "ldrc/ops.hpp"
#include "ldrc/reference.hpp"
#include "ldrc/rng.hpp"

using namespace ldrc;

namespace {

Tensor zero_offsets(int n, int k, int ho, int wo) { return Tensor({n, 2 * k * k, ho, wo}); }

Tensor const_offsets(int n, int k, int ho, int wo, float dy, float dx) {
    Tensor off({n, 2 * k * k, ho, wo});
    for (int b = 0; b < n; ++b)
        for (int j = 0; j < k * k; ++j)
            for (int y = 0; y < ho; ++y)
                for (int x = 0; x < wo; ++x) {
                    off.at(b, 2 * j, y, x) = dy;
                    off.at(b, 2 * j + 1, y, x) = dx;
                }
    return off;
}

}  // namespace

TEST_CASE("bilinear_sample hand cases") {
    // row [1,2,3]
    Tensor x({1, 1, 1, 3}, std::vector<float>{1, 2, 3});
    CHECK(bilinear_sample(x, 0, 0, 0.0f, 1.5f) == doctest::Approx(2.5));
    // exact lattice point
    CHECK(bilinear_sample(x, 0, 0, 0.0f, 2.0f) == doctest::Approx(3.0));
    // fully outside -> zero extension
    CHECK(bilinear_sample(x, 0, 0, -5.0f, -5.0f) == 0.0f);
    // partially outside: at (0,-0.5) only the x=0 neighbour contributes
    CHECK(bilinear_sample(x, 0, 0, 0.0f, -0.5f) == doctest::Approx(0.5));
}

TEST_CASE("zero-offset deformable conv equals standard conv (100 random cases)") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        int n = 1 + int(rng.uniform_int(0, 1));
        int cin = 1 + int(rng.uniform_int(0, 2));
        int cout = 1 + int(rng.uniform_int(0, 2));
        int h = 5 + int(rng.uniform_int(0, 3));
        int w = 5 + int(rng.uniform_int(0, 3));
        int k = rng.coin() ? 3 : 1;
        int stride = rng.coin() ? 1 : 2;
        int pad = k == 3 ? 1 : 0;
        Tensor x = random_tensor({n, cin, h, w}, rng, -1.0f, 1.0f, false);
        Tensor wt = random_tensor({cout, cin, k, k}, rng, -1.0f, 1.0f, false);
        Tensor b = random_tensor({1, cout, 1, 1}, rng, -1.0f, 1.0f, false);
        Tensor expect = conv2d(x, wt, b, stride, pad, 1);
        Tensor off = zero_offsets(n, k, expect.shape().h, expect.shape().w);
        Tensor got = deform_conv2d(x, off, wt, b, stride, pad, 1);
        REQUIRE(got.shape() == expect.shape());
        for (size_t i = 0; i < got.values().size(); ++i)
            CHECK(std::abs(got.values()[i] - expect.values()[i]) < 1e-5);
    }
}

TEST_CASE("integer offsets reproduce conv over the translated zero-padded input") {
    // Embed x translated by (dy,dx) inside a zero canvas wide enough that the
    // convolution needs no implicit padding of its own, then compare the
    // matching output window. This is the brute-force shifted-conv oracle
    // with the zero extension made explicit.
    Rng rng(23);
    const int h = 7, w = 7, pad = 1;
    for (auto [dy, dx] : std::vector<std::pair<int, int>>{{0, 1}, {1, 0}, {-1, 1}, {2, -1}}) {
        Tensor x = random_tensor({1, 2, h, w}, rng, -1.0f, 1.0f, false);
        Tensor wt = random_tensor({3, 2, 3, 3}, rng, -1.0f, 1.0f, false);

        int margin = pad + std::max(std::abs(dy), std::abs(dx)) + 1;
        Tensor canvas({1, 2, h + 2 * margin, w + 2 * margin}, 0.0f);
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    canvas.at(0, c, margin - dy + y, margin - dx + xx) = x.at(0, c, y, xx);
        Tensor full = ref::conv2d(canvas, wt, std::nullopt, 1, 0, 1);

        Tensor off = const_offsets(1, 3, h, w, float(dy), float(dx));
        Tensor got = deform_conv2d(x, off, wt, std::nullopt, 1, pad, 1);
        for (int co = 0; co < 3; ++co)
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < w; ++ox) {
                    float expect = full.at(0, co, oy + margin - pad, ox + margin - pad);
                    CHECK(std::abs(got.at(0, co, oy, ox) - expect) < 2e-6);
                }
    }
}

TEST_CASE("1x1 kernel, fractional offset reduces to bilinear_sample") {
    // row [1,2,3], weight 1, sample the middle pixel shifted +0.5 in x
    Tensor x({1, 1, 1, 3}, std::vector<float>{1, 2, 3});
    Tensor w({1, 1, 1, 1}, 1.0f);
    Tensor off({1, 2, 1, 3});
    off.at(0, 1, 0, 1) = 0.5f;
    Tensor y = deform_conv2d(x, off, w, std::nullopt, 1, 0, 1);
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(2.5));
}

TEST_CASE("deform_conv2d validation errors") {
    Tensor x({1, 2, 5, 5});
    Tensor w({1, 3, 3, 3});
    Tensor off = zero_offsets(1, 3, 5, 5);
    CHECK_THROWS_WITH_AS(deform_conv2d(x, off, w, std::nullopt, 1, 1, 1),
                         doctest::Contains("channels"), Error);
    Tensor w2({1, 2, 3, 3});
    Tensor bad_off({1, 18, 4, 5});
    CHECK_THROWS_WITH_AS(deform_conv2d(x, bad_off, w2, std::nullopt, 1, 1, 1),
                         doctest::Contains("offset field"), Error);
}

TEST_CASE("locality: a changed pixel only affects outputs sampling near it") {
    Rng rng(31);
    Tensor x = random_tensor({1, 1, 9, 9}, rng, 0.0f, 1.0f, false);
    Tensor w({1, 1, 1, 1}, 1.0f);
    Tensor off = const_offsets(1, 1, 9, 9, 0.25f, 0.25f);
    Tensor base = deform_conv2d(x, off, w, std::nullopt, 1, 0, 1);
    Tensor x2 = x.detach();
    x2.at(0, 0, 4, 4) += 0.5f;
    Tensor bumped = deform_conv2d(x2, off, w, std::nullopt, 1, 0, 1);
    // sample position of output (oy,ox) is (oy+0.25, ox+0.25): only outputs
    // with bilinear support touching (4,4) may change
    for (int oy = 0; oy < 9; ++oy)
        for (int ox = 0; ox < 9; ++ox) {
            bool may_change = (oy == 4 || oy == 3) && (ox == 4 || ox == 3);
            if (!may_change)
                CHECK(base.at(0, 0, oy, ox) == bumped.at(0, 0, oy, ox));
        }
    CHECK(bumped.at(0, 0, 4, 4) != base.at(0, 0, 4, 4));
}

TEST_CASE("finite-difference suite: deform module") {
    auto results = run_gradchecks("deform", 2, 1234);
    CHECK(results.size() == 3);
    for (const auto& r : results) {
        INFO(r.op, " worst rel err ", r.worst);
        CHECK(r.pass);
    }
}

TEST_CASE("deform layer with zero-initialized predictor equals plain conv") {
    Rng rng(41);
    DeformLayer layer(3, 5, 3, 1, 1, 1, rng);
    Tensor x = random_tensor({2, 3, 8, 8}, rng, -1.0f, 1.0f, false);
    Tensor expect = conv2d(x, layer.weight, layer.bias, 1, 1, 1);
    Tensor got = layer.forward(x);
    CHECK(got.shape() == expect.shape());
    for (size_t i = 0; i < got.values().size(); ++i)
        CHECK(std::abs(got.values()[i] - expect.values()[i]) < 1e-5);
}

TEST_CASE("deform layer: offset-predictor weights receive gradient") {
    Rng rng(43);
    DeformLayer layer(2, 2, 3, 1, 1, 1, rng);
    // move the predictor off the zero-offset saddle so offsets vary
    for (auto& v : layer.offset_predictor.bias.values()) v = 0.3f;
    Tensor x = random_tensor({1, 2, 6, 6}, rng, 0.2f, 1.0f, false);
    layer.offset_predictor.weight.zero_grad();
    backward(mse_loss(layer.forward(x), Tensor({1, 2, 6, 6}, 0.0f)));
    double norm = 0.0;
    for (float g : layer.offset_predictor.weight.grad()) norm += std::abs(g);
    CHECK(norm > 0.0);
}

TEST_CASE("backward fault hook is detected by the gradcheck suite") {
    debug::set_deform_backward_fault(true);
    auto results = run_gradchecks("deform", 1, 7);
    debug::set_deform_backward_fault(false);
    bool deform_failed = false;
    for (const auto& r : results)
        if (r.op == "deform_conv2d" && !r.pass) deform_failed = true;
    CHECK(deform_failed);
}
