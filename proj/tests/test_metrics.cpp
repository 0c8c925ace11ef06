#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ldrc/metrics.hpp"
#include "ldrc/rng.hpp"

using namespace ldrc;

namespace {

Image noise_image(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    Image img(w, h);
    for (auto& v : img.rgb) v = float(rng.uniform());
    return img;
}

}  // namespace

TEST_CASE("psnr: sentinel, formula values, errors") {
    Image a = noise_image(16, 16, 1);
    CHECK(std::isinf(psnr(a, a)));

    // direct formula: mse 0.01 at max 1 -> 20 dB
    CHECK(psnr_mse(0.01) == doctest::Approx(20.0).epsilon(1e-9));

    // constant offset 16/255 on the 8-bit scale
    Image flat_a(8, 8, 0.25f), flat_b(8, 8, 0.25f + 16.0f / 255.0f);
    double expect = 10.0 * std::log10(255.0 * 255.0 / 256.0);  // = 24.0489...
    CHECK(psnr(flat_a, flat_b) == doctest::Approx(expect).epsilon(1e-9));

    CHECK_THROWS_AS(psnr(a, Image(8, 8)), Error);
}

TEST_CASE("psnr: strictly decreasing in mse, permutation and swap invariant") {
    double prev = psnr_mse(1e-4);
    for (double mse : {1e-3, 1e-2, 1e-1}) {
        double v = psnr_mse(mse);
        CHECK(v < prev);
        prev = v;
    }

    Image a = noise_image(12, 12, 2);
    Image b = noise_image(12, 12, 3);
    CHECK(psnr(a, b) == psnr(b, a));

    // same permutation applied to both images leaves psnr unchanged
    Rng rng(4);
    Image pa = a, pb = b;
    for (size_t i = pa.rgb.size(); i > 1; --i) {
        size_t j = size_t(rng.uniform_int(0, std::int64_t(i) - 1));
        std::swap(pa.rgb[i - 1], pa.rgb[j]);
        std::swap(pb.rgb[i - 1], pb.rgb[j]);
    }
    CHECK(psnr(pa, pb) == doctest::Approx(psnr(a, b)).epsilon(1e-12));
}

TEST_CASE("ssim: self-similarity, closed form, symmetry, range") {
    Image a = noise_image(32, 24, 5);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    // constant images: variance terms vanish, luminance term remains
    Image ca(16, 16, 0.25f), cb(16, 16, 0.75f);
    double c1 = 1e-4;
    double closed = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
    CHECK(ssim(ca, cb) == doctest::Approx(closed).epsilon(1e-6));

    Image b = noise_image(32, 24, 6);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ssim(a, b) >= -1.0);
    CHECK(ssim(a, b) < 1.0);  // equal to 1 only for identical images

    // any perturbation breaks perfect similarity
    Image nudged = a;
    nudged.rgb[100] = std::min(1.0f, nudged.rgb[100] + 0.5f);
    CHECK(ssim(a, nudged) < 1.0 - 1e-9);

    CHECK_THROWS_WITH_AS(ssim(Image(8, 8), Image(8, 8)), doctest::Contains("window"), Error);
}

TEST_CASE("eval_dataset: identity outputs, misalignment, single pair") {
    std::vector<Image> gts{noise_image(16, 16, 7), noise_image(16, 16, 8)};
    std::vector<std::string> names{"a", "b"};

    MetricReport perfect = eval_dataset(gts, gts, names);
    CHECK(std::isinf(perfect.mean_psnr));
    CHECK(perfect.mean_ssim == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<Image> single_out{gts[0]};
    std::vector<Image> single_gt{gts[1]};
    MetricReport one = eval_dataset(single_out, single_gt, {"only"});
    CHECK(one.mean_psnr == doctest::Approx(one.per_image[0].psnr));
    CHECK(one.mean_ssim == doctest::Approx(one.per_image[0].ssim));

    CHECK_THROWS_WITH_AS(eval_dataset(single_out, gts, names), doctest::Contains("misaligned"),
                         Error);
}

TEST_CASE("report serialization round trips, including infinite psnr") {
    MetricReport r;
    r.per_image.push_back({"x.ppm", std::numeric_limits<double>::infinity(), 1.0});
    r.per_image.push_back({"y.ppm", 24.5, 0.912345});
    r.mean_psnr = std::numeric_limits<double>::infinity();
    r.mean_ssim = 0.956;

    MetricReport back = report_from_json(report_to_json(r));
    REQUIRE(back.per_image.size() == 2);
    CHECK(std::isinf(back.per_image[0].psnr));
    CHECK(back.per_image[1].psnr == doctest::Approx(24.5));
    CHECK(back.per_image[1].ssim == doctest::Approx(0.912345));
    CHECK(std::isinf(back.mean_psnr));
    CHECK(back.mean_ssim == doctest::Approx(0.956));

    std::string tsv = report_to_tsv(r);
    CHECK(tsv.find("x.ppm\tinf\t") != std::string::npos);
    CHECK(tsv.find("mean\tinf\t") != std::string::npos);

    CHECK_THROWS_AS(report_from_json("{"), Error);
    CHECK_THROWS_AS(report_from_json("{\"images\":[]}"), Error);
}
