#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ldrc/gradcheck.hpp"
#include "ldrc/ops.hpp"
#include "ldrc/parallel.hpp"
#include "ldrc/reference.hpp"
#include "ldrc/rng.hpp"
#include "ldrc/tensor.hpp"

using namespace ldrc;

TEST_CASE("tensor shape and data invariants") {
    Tensor t({2, 3, 4, 5}, 1.5f);
    CHECK(t.numel() == 120);
    CHECK(t.at(1, 2, 3, 4) == 1.5f);
    CHECK_THROWS_AS(Tensor({0, 1, 1, 1}), Error);
    CHECK_THROWS_AS(Tensor({1, 1, 2, 2}, std::vector<float>{1.0f}), Error);
    CHECK_THROWS_AS(Tensor({1, 1, 1, 2}).item(), Error);
    CHECK(Tensor::scalar(2.0f).item() == 2.0f);
}

TEST_CASE("conv2d all-ones 3x3: center 9, corners 4") {
    Tensor x({1, 1, 3, 3}, 1.0f);
    Tensor w({1, 1, 3, 3}, 1.0f);
    Tensor y = conv2d(x, w, std::nullopt, 1, 1, 1);
    CHECK(y.shape() == Shape4{1, 1, 3, 3});
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(9.0));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 0, 2) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 2, 0) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 2, 2) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(6.0));

    // cross-check the whole output against the brute-force oracle
    Tensor r = ref::conv2d(x, w, std::nullopt, 1, 1, 1);
    for (int i = 0; i < 9; ++i) CHECK(y.values()[size_t(i)] == doctest::Approx(r.values()[size_t(i)]));
}

TEST_CASE("conv2d identity 1x1 kernel") {
    Rng rng(7);
    Tensor x = random_tensor({2, 1, 4, 5}, rng, -1.0f, 1.0f, false);
    Tensor w({1, 1, 1, 1}, 1.0f);
    Tensor y = conv2d(x, w);
    for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d dilation-2 shape: 5x5 stays 5x5 with padding 2") {
    Tensor x({1, 1, 5, 5}, 0.5f);
    Tensor w({1, 1, 3, 3}, 1.0f);
    Tensor y = conv2d(x, w, std::nullopt, 1, 2, 2);
    CHECK(y.shape() == Shape4{1, 1, 5, 5});
}

TEST_CASE("conv2d output-dimension formula over the k/stride/dilation sweep") {
    Rng rng(3);
    for (int k : {1, 3, 5})
        for (int stride : {1, 2})
            for (int dilation : {1, 2, 4}) {
                int h = 16, w = 13;
                int pad = 1;
                int eh = (h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
                int ew = (w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
                if (eh <= 0 || ew <= 0) continue;
                Tensor x = random_tensor({1, 2, h, w}, rng, -1.0f, 1.0f, false);
                Tensor wt = random_tensor({3, 2, k, k}, rng, -1.0f, 1.0f, false);
                Tensor y = conv2d(x, wt, std::nullopt, stride, pad, dilation);
                CHECK(y.shape() == Shape4{1, 3, eh, ew});
                // values against the brute-force oracle
                Tensor r = ref::conv2d(x, wt, std::nullopt, stride, pad, dilation);
                double worst = 0.0;
                for (size_t i = 0; i < y.values().size(); ++i)
                    worst = std::max(worst, std::abs(double(y.values()[i]) - r.values()[i]));
                CHECK(worst < 1e-4);
            }
}

TEST_CASE("conv2d errors: channel mismatch and non-positive output dims") {
    Tensor x({1, 2, 4, 4}, 0.0f);
    Tensor w({1, 3, 3, 3}, 0.0f);
    CHECK_THROWS_WITH_AS(conv2d(x, w), doctest::Contains("channels"), Error);
    Tensor w2({1, 2, 5, 5}, 0.0f);
    CHECK_THROWS_WITH_AS(conv2d(x, w2), doctest::Contains("non-positive"), Error);
}

TEST_CASE("conv2d linearity: conv(a*x) == a*conv(x) for bias-free") {
    Rng rng(11);
    Tensor x = random_tensor({1, 3, 8, 8}, rng, -1.0f, 1.0f, false);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -1.0f, 1.0f, false);
    const float alpha = 3.25f;
    Tensor xs(x.shape());
    for (size_t i = 0; i < x.values().size(); ++i) xs.values()[i] = alpha * x.values()[i];
    Tensor y1 = conv2d(xs, w, std::nullopt, 1, 1, 1);
    Tensor y2 = conv2d(x, w, std::nullopt, 1, 1, 1);
    for (size_t i = 0; i < y1.values().size(); ++i) {
        double lhs = y1.values()[i];
        double rhs = alpha * double(y2.values()[i]);
        CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(rhs)));
    }
}

TEST_CASE("conv2d is bit-identical across thread counts") {
    Rng rng(5);
    Tensor x = random_tensor({2, 3, 16, 16}, rng, -1.0f, 1.0f, false);
    Tensor w = random_tensor({5, 3, 3, 3}, rng, -1.0f, 1.0f, false);
    set_num_threads(1);
    Tensor y1 = conv2d(x, w, std::nullopt, 1, 1, 1);
    set_num_threads(4);
    Tensor y4 = conv2d(x, w, std::nullopt, 1, 1, 1);
    set_num_threads(0);
    CHECK(y1.values() == y4.values());
}

TEST_CASE("avgpool2d hand cases") {
    // 2x2 window mean
    Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
    Tensor y = avgpool2d(x, 2, 2, 0);
    CHECK(y.shape() == Shape4{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(2.5));

    // constant input, no padding -> constant output
    Tensor c({1, 2, 6, 6}, 0.7f);
    Tensor yc = avgpool2d(c, 3, 1, 0);
    for (float v : yc.values()) CHECK(v == doctest::Approx(0.7));

    CHECK_THROWS_AS(avgpool2d(Tensor({1, 1, 2, 2}), 5, 1, 0), Error);
}

TEST_CASE("global_avgpool") {
    Tensor x({1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3});
    CHECK(global_avgpool(x).item() == doctest::Approx(1.5));

    Tensor c({2, 8, 16, 16}, 0.25f);
    Tensor y = global_avgpool(c);
    CHECK(y.shape() == Shape4{2, 8, 1, 1});
    for (float v : y.values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("elementwise suite hand cases") {
    Tensor x({1, 1, 1, 2}, std::vector<float>{-1.0f, 2.0f});
    Tensor r = relu(x);
    CHECK(r.values()[0] == 0.0f);
    CHECK(r.values()[1] == 2.0f);

    CHECK(sigmoid(Tensor::scalar(0.0f)).item() == doctest::Approx(0.5));

    Tensor a({1, 1, 1, 2}, std::vector<float>{1, 2});
    Tensor b({1, 1, 1, 2}, std::vector<float>{3, 5});
    CHECK(add(a, b).values()[1] == 7.0f);
    CHECK(sub(b, a).values()[1] == 3.0f);
    CHECK(mul(a, b).values()[1] == 10.0f);
    CHECK_THROWS_AS(add(a, Tensor({1, 1, 2, 1})), Error);

    Rng rng(2);
    Tensor big = random_tensor({2, 3, 4, 4}, rng, -1.0f, 1.0f, false);
    Tensor ones({2, 3, 1, 1}, 1.0f);
    Tensor scaled = scale_channels(big, ones);
    CHECK(scaled.values() == big.values());
    CHECK_THROWS_AS(scale_channels(big, Tensor({2, 2, 1, 1}, 1.0f)), Error);
}

TEST_CASE("concat_channels shapes and identity") {
    Rng rng(4);
    Tensor a = random_tensor({2, 4, 5, 6}, rng, -1.0f, 1.0f, false);
    Tensor b = random_tensor({2, 6, 5, 6}, rng, -1.0f, 1.0f, false);
    Tensor y = concat_channels({a, b});
    CHECK(y.shape() == Shape4{2, 10, 5, 6});

    Tensor single = concat_channels({a});
    CHECK(single.values() == a.values());

    CHECK_THROWS_AS(concat_channels({a, Tensor({2, 1, 4, 6})}), Error);
    CHECK_THROWS_AS(concat_channels({}), Error);
}

TEST_CASE("upsample2x hand cases") {
    Tensor x({1, 1, 1, 1}, std::vector<float>{3.5f});
    Tensor yn = upsample2x(x, UpsampleMode::Nearest);
    CHECK(yn.shape() == Shape4{1, 1, 2, 2});
    for (float v : yn.values()) CHECK(v == 3.5f);

    Tensor c({1, 2, 3, 3}, 0.4f);
    for (auto mode : {UpsampleMode::Nearest, UpsampleMode::Bilinear}) {
        Tensor y = upsample2x(c, mode);
        CHECK(y.shape() == Shape4{1, 2, 6, 6});
        for (float v : y.values()) CHECK(v == doctest::Approx(0.4));
    }
}

TEST_CASE("mse_loss hand cases") {
    Tensor a({1, 1, 1, 2}, std::vector<float>{1, 2});
    Tensor b({1, 1, 1, 2}, std::vector<float>{1, 4});
    CHECK(mse_loss(a, a).item() == 0.0f);
    CHECK(mse_loss(a, b).item() == doctest::Approx(2.0));
    CHECK_THROWS_AS(mse_loss(a, Tensor({1, 1, 2, 1})), Error);
}

TEST_CASE("backward: mse(x, 0) at x=3 gives grad 6") {
    Tensor x = Tensor::scalar(3.0f);
    x.set_requires_grad(true);
    Tensor zero = Tensor::scalar(0.0f);
    Tensor loss = mse_loss(x, zero);
    CHECK(loss.item() == doctest::Approx(9.0));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: unreachable parameter keeps zero grad") {
    Tensor p = Tensor::scalar(1.0f);
    p.set_requires_grad(true);
    p.zero_grad();
    Tensor x = Tensor::scalar(2.0f);
    x.set_requires_grad(true);
    backward(mse_loss(x, Tensor::scalar(0.0f)));
    CHECK(p.grad()[0] == 0.0f);
}

TEST_CASE("backward: non-scalar loss is an error") {
    Tensor x({1, 1, 1, 2}, std::vector<float>{1, 2});
    x.set_requires_grad(true);
    Tensor y = relu(x);
    CHECK_THROWS_WITH_AS(backward(y), doctest::Contains("scalar"), Error);
}

TEST_CASE("backward: grads accumulate until zero_grad") {
    Tensor x = Tensor::scalar(3.0f);
    x.set_requires_grad(true);
    Tensor zero = Tensor::scalar(0.0f);
    backward(mse_loss(x, zero));
    backward(mse_loss(x, zero));
    CHECK(x.grad()[0] == doctest::Approx(12.0));
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0f);
}

TEST_CASE("backward visits shared subgraphs once") {
    // y = x + x: dy/dx = 2, and the add node must not run twice
    Tensor x = Tensor::scalar(1.5f);
    x.set_requires_grad(true);
    Tensor y = add(x, x);
    Tensor loss = mse_loss(y, Tensor::scalar(0.0f));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0 * 3.0 * 2.0));  // d/dx (2x)^2 = 8x = 12
}

TEST_CASE("finite-difference suite: tensor module ops") {
    auto results = run_gradchecks("tensor", 2, 99);
    CHECK(results.size() == 14);
    for (const auto& r : results) {
        INFO(r.op, " worst rel err ", r.worst);
        CHECK(r.pass);
    }
}

TEST_CASE("forward/backward determinism for a fixed seed") {
    auto run = [](int threads) {
        set_num_threads(threads);
        Rng rng(42);
        Tensor x = random_tensor({2, 3, 8, 8}, rng, -1.0f, 1.0f, true);
        Tensor w = random_tensor({4, 3, 3, 3}, rng, -1.0f, 1.0f, true);
        Tensor b = random_tensor({1, 4, 1, 1}, rng, -1.0f, 1.0f, true);
        Tensor y = conv2d(x, w, b, 1, 1, 1);
        Tensor loss = mse_loss(y, Tensor(y.shape(), 0.1f));
        backward(loss);
        std::vector<float> out = y.values();
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        out.insert(out.end(), b.grad().begin(), b.grad().end());
        set_num_threads(0);
        return out;
    };
    CHECK(run(1) == run(1));
    CHECK(run(1) == run(2));  // deterministic reduction: thread count is irrelevant
}

TEST_CASE("non-finite forward values raise immediately") {
    Tensor x({1, 1, 2, 2}, std::vector<float>{1.0f, 2.0f, std::numeric_limits<float>::infinity(), 0.0f});
    Tensor w({1, 1, 1, 1}, 1.0f);
    CHECK_THROWS_WITH_AS(conv2d(x, w), doctest::Contains("non-finite"), Error);

    Tensor big({1, 1, 1, 1}, 1e30f);
    CHECK_THROWS_AS(mul(mul(big, big), big), Error);
}

TEST_CASE("crop2d takes the top-left window") {
    Tensor x({1, 1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor y = crop2d(x, 2, 2);
    CHECK(y.values() == std::vector<float>{1, 2, 4, 5});
    CHECK_THROWS_AS(crop2d(x, 4, 1), Error);
}
