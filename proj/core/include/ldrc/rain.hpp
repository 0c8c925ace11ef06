#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldrc/image.hpp"
#include "ldrc/rng.hpp"

namespace ldrc {

// Streak layer parameters. The same (params, clean image) always yields the
// same rainy image.
struct RainParams {
    double angle_deg = 0.0;  // [-45, 45], 0 = vertical fall
    int length_px = 9;
    double density = 0.02;   // fraction of seed pixels, [0, 1]
    double intensity = 0.6;  // peak brightness scale, [0, 1]
    std::uint64_t seed = 0;

    void validate() const;
};

// Seeded uniform noise thresholded at the (1 - density) quantile, convolved
// with a unit-sum line kernel of the given length and angle (bilinearly
// rasterized), scaled by intensity and clipped to [0,1]. Row-major h*w map.
std::vector<float> render_streaks(int h, int w, const RainParams& p);

// R = clip(B + S, 0, 1) with the single-channel streak layer broadcast over
// RGB (white rain).
Image apply_streaks(const Image& clean, const std::vector<float>& streaks);
Image synth_rainy(const Image& clean, const RainParams& p);

struct RainRanges {
    double angle_min = -40.0, angle_max = 40.0;
    int length_min = 9, length_max = 15;
    double density_min = 0.02, density_max = 0.02;
    double intensity_min = 0.5, intensity_max = 0.8;
};

struct DatasetPair {
    std::string rainy_path, clean_path;  // relative to the manifest directory
    RainParams params;
};

struct PairedDataset {
    std::string root;  // directory holding manifest.tsv
    std::vector<DatasetPair> pairs;
};

// Renders n pairs from the clean images in clean_dir (cycled in sorted
// order), writes rainy_NNN.ppm / clean_NNN.ppm plus manifest.tsv, and
// returns the dataset. Per-pair parameters are sampled from the ranges with
// seeds derived from (seed, pair index).
PairedDataset make_dataset(const std::string& clean_dir, const std::string& out_dir, int n,
                           const RainRanges& ranges, std::uint64_t seed);

PairedDataset load_dataset(const std::string& dir);

// Manifest line: "<rainy>\t<clean>\t<angle>\t<length>\t<density>\t<intensity>".
std::string manifest_line(const DatasetPair& p);

// Dominant streak orientation in degrees from vertical, estimated from the
// structure tensor of the map. Used to verify direction consistency.
double streak_orientation_deg(const std::vector<float>& map, int h, int w);

}  // namespace ldrc
