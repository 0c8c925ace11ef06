#include "ldrc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

namespace ldrc {

double psnr_mse(double mse, double max_val) {
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

double psnr(const Image& a, const Image& b, double max_val) {
    if (a.width != b.width || a.height != b.height)
        throw Error("psnr: image sizes differ");
    double acc = 0.0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        double d = double(a.rgb[i]) - b.rgb[i];
        acc += d * d;
    }
    return psnr_mse(acc / double(a.rgb.size()), max_val);
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

const std::vector<double>& gaussian_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(kWindow);
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            double d = i - (kWindow - 1) / 2.0;
            w[size_t(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
            sum += w[size_t(i)];
        }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return win;
}

// separable valid-mode Gaussian filter of one channel plane
std::vector<double> gauss_valid(const std::vector<double>& plane, int h, int w, int& oh, int& ow) {
    const auto& win = gaussian_window();
    ow = w - kWindow + 1;
    std::vector<double> rows(size_t(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double a = 0.0;
            for (int k = 0; k < kWindow; ++k) a += win[size_t(k)] * plane[size_t(y) * w + x + k];
            rows[size_t(y) * ow + x] = a;
        }
    oh = h - kWindow + 1;
    std::vector<double> out(size_t(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double a = 0.0;
            for (int k = 0; k < kWindow; ++k) a += win[size_t(k)] * rows[size_t(y + k) * ow + x];
            out[size_t(y) * ow + x] = a;
        }
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw Error("ssim: image sizes differ");
    if (a.width < kWindow || a.height < kWindow)
        throw Error("ssim: image smaller than the 11x11 window");

    const double c1 = kK1 * kK1;  // dynamic range 1.0
    const double c2 = kK2 * kK2;
    const int h = a.height, w = a.width;
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        std::vector<double> pa(size_t(h) * w), pb(size_t(h) * w), paa(size_t(h) * w),
            pbb(size_t(h) * w), pab(size_t(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double va = a.at(y, x, ch), vb = b.at(y, x, ch);
                size_t i = size_t(y) * w + x;
                pa[i] = va;
                pb[i] = vb;
                paa[i] = va * va;
                pbb[i] = vb * vb;
                pab[i] = va * vb;
            }
        int oh = 0, ow = 0;
        auto mu_a = gauss_valid(pa, h, w, oh, ow);
        auto mu_b = gauss_valid(pb, h, w, oh, ow);
        auto m_aa = gauss_valid(paa, h, w, oh, ow);
        auto m_bb = gauss_valid(pbb, h, w, oh, ow);
        auto m_ab = gauss_valid(pab, h, w, oh, ow);

        double acc = 0.0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            double ma = mu_a[i], mb = mu_b[i];
            double va = m_aa[i] - ma * ma;
            double vb = m_bb[i] - mb * mb;
            double cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / double(mu_a.size());
    }
    return total / 3.0;
}

MetricReport eval_dataset(const std::vector<Image>& outputs, const std::vector<Image>& targets,
                          const std::vector<std::string>& names) {
    if (outputs.size() != targets.size() || outputs.size() != names.size())
        throw Error("eval_dataset: misaligned output/target/name lists");
    if (outputs.empty()) throw Error("eval_dataset: empty dataset");
    MetricReport r;
    double psum = 0.0, ssum = 0.0;
    for (size_t i = 0; i < outputs.size(); ++i) {
        PairMetrics m{names[i], psnr(outputs[i], targets[i]), ssim(outputs[i], targets[i])};
        psum += m.psnr;
        ssum += m.ssim;
        r.per_image.push_back(std::move(m));
    }
    r.mean_psnr = psum / double(outputs.size());
    r.mean_ssim = ssum / double(outputs.size());
    return r;
}

namespace {

std::string fmt_psnr(double v) {
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string fmt_ssim(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

nlohmann::json psnr_to_json(double v) {
    if (std::isinf(v)) return "inf";
    return v;
}

double psnr_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw Error("report: bad psnr value '" + j.get<std::string>() + "'");
    }
    return j.get<double>();
}

}  // namespace

std::string report_to_tsv(const MetricReport& r) {
    std::string s = "name\tpsnr\tssim\n";
    for (const auto& m : r.per_image)
        s += m.name + "\t" + fmt_psnr(m.psnr) + "\t" + fmt_ssim(m.ssim) + "\n";
    s += "mean\t" + fmt_psnr(r.mean_psnr) + "\t" + fmt_ssim(r.mean_ssim) + "\n";
    return s;
}

std::string report_to_json(const MetricReport& r) {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    for (const auto& m : r.per_image)
        j["images"].push_back({{"name", m.name}, {"psnr", psnr_to_json(m.psnr)}, {"ssim", m.ssim}});
    j["mean_psnr"] = psnr_to_json(r.mean_psnr);
    j["mean_ssim"] = r.mean_ssim;
    return j.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("report: invalid JSON: ") + e.what());
    }
    MetricReport r;
    try {
        for (const auto& m : j.at("images"))
            r.per_image.push_back(
                {m.at("name").get<std::string>(), psnr_from_json(m.at("psnr")),
                 m.at("ssim").get<double>()});
        r.mean_psnr = psnr_from_json(j.at("mean_psnr"));
        r.mean_ssim = j.at("mean_ssim").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("report: missing field: ") + e.what());
    }
    return r;
}

}  // namespace ldrc
