#pragma once

#include <string>
#include <vector>

#include "ldrc/image.hpp"

namespace ldrc {

// 10*log10(max^2 / MSE) in dB over all three channels jointly; identical
// images return +infinity.
double psnr(const Image& a, const Image& b, double max_val = 1.0);
double psnr_mse(double mse, double max_val = 1.0);

// Mean local SSIM with the reference settings: 11x11 Gaussian window
// sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0, computed per channel over
// the valid (unpadded) region and averaged.
double ssim(const Image& a, const Image& b);

struct PairMetrics {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    std::vector<PairMetrics> per_image;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

MetricReport eval_dataset(const std::vector<Image>& outputs, const std::vector<Image>& targets,
                          const std::vector<std::string>& names);

// Tab-separated text: one "name\tpsnr\tssim" line per image plus a final
// "mean\t..." line. Infinite PSNR prints as "inf".
std::string report_to_tsv(const MetricReport& r);

// JSON schema: {"images":[{"name","psnr","ssim"},...],"mean_psnr","mean_ssim"}
// with infinite PSNR encoded as the string "inf".
std::string report_to_json(const MetricReport& r);
MetricReport report_from_json(const std::string& text);

}  // namespace ldrc
