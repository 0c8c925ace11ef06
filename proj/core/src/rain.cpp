#include "ldrc/rain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;

namespace ldrc {

void RainParams::validate() const {
    if (angle_deg < -45.0 || angle_deg > 45.0)
        throw Error("rain: angle must be in [-45, 45], got " + std::to_string(angle_deg));
    if (length_px < 1) throw Error("rain: length must be >= 1");
    if (density < 0.0 || density > 1.0) throw Error("rain: density must be in [0, 1]");
    if (intensity < 0.0 || intensity > 1.0) throw Error("rain: intensity must be in [0, 1]");
}

std::vector<float> render_streaks(int h, int w, const RainParams& p) {
    p.validate();
    if (h < p.length_px || w < p.length_px)
        throw Error("render_streaks: " + std::to_string(h) + "x" + std::to_string(w) +
                    " map cannot hold streaks of length " + std::to_string(p.length_px));

    const std::int64_t n = std::int64_t(h) * w;
    Rng rng(p.seed);
    std::vector<float> noise;
    noise.resize(size_t(n));
    for (auto& v : noise) v = float(rng.uniform());

    // keep the top round(density * n) seeds
    std::int64_t keep = std::llround(p.density * double(n));
    std::vector<float> map(size_t(n), 0.0f);
    if (keep > 0 && p.intensity > 0.0) {
        float threshold = -1.0f;
        if (keep >= n) {
            threshold = -1.0f;
        } else {
            std::vector<float> sorted(noise);
            std::nth_element(sorted.begin(), sorted.begin() + (n - keep), sorted.end());
            threshold = sorted[size_t(n - keep)];
        }

        // unit-sum line kernel, bilinearly rasterized
        const int L = p.length_px;
        const double a = p.angle_deg * std::numbers::pi / 180.0;
        const double dy = std::cos(a), dx = std::sin(a);
        const double cy = (L - 1) / 2.0, cx = (L - 1) / 2.0;
        std::vector<double> kernel(size_t(L) * L, 0.0);
        for (int i = 0; i < L; ++i) {
            double t = double(i) - (L - 1) / 2.0;
            double py = cy + t * dy, px = cx + t * dx;
            int y0 = int(std::floor(py)), x0 = int(std::floor(px));
            double fy = py - y0, fx = px - x0;
            auto splat = [&](int y, int x, double wgt) {
                if (y >= 0 && y < L && x >= 0 && x < L) kernel[size_t(y) * L + x] += wgt;
            };
            splat(y0, x0, (1 - fy) * (1 - fx));
            splat(y0, x0 + 1, (1 - fy) * fx);
            splat(y0 + 1, x0, fy * (1 - fx));
            splat(y0 + 1, x0 + 1, fy * fx);
        }
        double ksum = 0.0;
        for (double v : kernel) ksum += v;
        for (double& v : kernel) v /= ksum;

        // scatter the kernel from each seed (sparse: only keep*L^2 work)
        std::vector<double> acc(size_t(n), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (noise[size_t(y) * w + x] < threshold) continue;
                for (int u = 0; u < L; ++u) {
                    int yy = y + u - int(cy);
                    if (yy < 0 || yy >= h) continue;
                    for (int v = 0; v < L; ++v) {
                        int xx = x + v - int(cx);
                        if (xx < 0 || xx >= w) continue;
                        acc[size_t(yy) * w + xx] += kernel[size_t(u) * L + v];
                    }
                }
            }
        for (std::int64_t i = 0; i < n; ++i)
            map[size_t(i)] = std::clamp(float(acc[size_t(i)] * p.intensity), 0.0f, 1.0f);
    }
    return map;
}

Image apply_streaks(const Image& clean, const std::vector<float>& streaks) {
    if (streaks.size() != size_t(clean.width) * clean.height)
        throw Error("apply_streaks: streak map size does not match the image");
    Image rainy = clean;
    for (int y = 0; y < clean.height; ++y)
        for (int x = 0; x < clean.width; ++x) {
            float s = streaks[size_t(y) * clean.width + x];
            for (int c = 0; c < 3; ++c)
                rainy.at(y, x, c) = std::clamp(clean.at(y, x, c) + s, 0.0f, 1.0f);
        }
    return rainy;
}

Image synth_rainy(const Image& clean, const RainParams& p) {
    return apply_streaks(clean, render_streaks(clean.height, clean.width, p));
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) out.push_back(tok);
    return out;
}

}  // namespace

std::string manifest_line(const DatasetPair& p) {
    return p.rainy_path + "\t" + p.clean_path + "\t" + fmt_double(p.params.angle_deg) + "\t" +
           std::to_string(p.params.length_px) + "\t" + fmt_double(p.params.density) + "\t" +
           fmt_double(p.params.intensity);
}

PairedDataset make_dataset(const std::string& clean_dir, const std::string& out_dir, int n,
                           const RainRanges& ranges, std::uint64_t seed) {
    if (n < 1) throw Error("make_dataset: need at least one pair");
    std::vector<std::string> sources;
    if (!fs::is_directory(clean_dir))
        throw Error("make_dataset: '" + clean_dir + "' is not a directory");
    for (const auto& e : fs::directory_iterator(clean_dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        if (ext == ".ppm" || ext == ".png") sources.push_back(e.path().string());
    }
    if (sources.empty()) throw Error("make_dataset: no .ppm/.png images in '" + clean_dir + "'");
    std::sort(sources.begin(), sources.end());

    fs::create_directories(out_dir);
    PairedDataset ds;
    ds.root = out_dir;
    std::string manifest;
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, std::uint64_t(i)));
        RainParams p;
        p.angle_deg = rng.uniform(ranges.angle_min, ranges.angle_max);
        p.length_px = int(rng.uniform_int(ranges.length_min, ranges.length_max));
        p.density = rng.uniform(ranges.density_min, ranges.density_max);
        p.intensity = rng.uniform(ranges.intensity_min, ranges.intensity_max);
        p.seed = rng.bits();

        Image clean = load_image(sources[size_t(i) % sources.size()]);
        Image rainy = synth_rainy(clean, p);

        char name[32];
        std::snprintf(name, sizeof name, "rainy_%03d.ppm", i);
        std::string rainy_name = name;
        std::snprintf(name, sizeof name, "clean_%03d.ppm", i);
        std::string clean_name = name;
        save_ppm(rainy, (fs::path(out_dir) / rainy_name).string());
        save_ppm(clean, (fs::path(out_dir) / clean_name).string());

        DatasetPair pair{rainy_name, clean_name, p};
        manifest += manifest_line(pair) + "\n";
        ds.pairs.push_back(std::move(pair));
    }
    std::ofstream mf(fs::path(out_dir) / "manifest.tsv", std::ios::binary);
    if (!mf) throw Error("make_dataset: cannot write manifest in '" + out_dir + "'");
    mf << manifest;
    return ds;
}

PairedDataset load_dataset(const std::string& dir) {
    fs::path manifest_path = fs::path(dir) / "manifest.tsv";
    std::ifstream mf(manifest_path);
    if (!mf) throw Error("dataset: cannot open '" + manifest_path.string() + "'");
    PairedDataset ds;
    ds.root = dir;
    std::string line;
    int lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_tabs(line);
        if (fields.size() != 6)
            throw Error("dataset: manifest line " + std::to_string(lineno) + " has " +
                        std::to_string(fields.size()) + " fields, expected 6");
        DatasetPair p;
        p.rainy_path = fields[0];
        p.clean_path = fields[1];
        try {
            p.params.angle_deg = std::stod(fields[2]);
            p.params.length_px = std::stoi(fields[3]);
            p.params.density = std::stod(fields[4]);
            p.params.intensity = std::stod(fields[5]);
        } catch (const std::exception&) {
            throw Error("dataset: malformed manifest line " + std::to_string(lineno));
        }
        ds.pairs.push_back(std::move(p));
    }
    if (ds.pairs.empty()) throw Error("dataset: '" + manifest_path.string() + "' lists no pairs");
    return ds;
}

double streak_orientation_deg(const std::vector<float>& map, int h, int w) {
    // structure tensor over central differences; the streak direction is
    // perpendicular to the dominant gradient direction
    double jxx = 0.0, jxy = 0.0, jyy = 0.0;
    for (int y = 1; y + 1 < h; ++y)
        for (int x = 1; x + 1 < w; ++x) {
            double gx = 0.5 * (double(map[size_t(y) * w + x + 1]) - map[size_t(y) * w + x - 1]);
            double gy = 0.5 * (double(map[size_t(y + 1) * w + x]) - map[size_t(y - 1) * w + x]);
            jxx += gx * gx;
            jxy += gx * gy;
            jyy += gy * gy;
        }
    double phi = 0.5 * std::atan2(2.0 * jxy, jxx - jyy);  // gradient orientation vs x-axis
    double angle = -phi * 180.0 / std::numbers::pi;       // streak angle vs vertical
    while (angle >= 90.0) angle -= 180.0;
    while (angle < -90.0) angle += 180.0;
    return angle;
}

}  // namespace ldrc
