#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldrc/tensor.hpp"

namespace ldrc {

// 8-bit RGB image mapped to [0,1] floats (v/255 on load, round(v*255)
// clamped on save). Interleaved rows, r g b per pixel.
struct Image {
    int width = 0, height = 0;
    std::vector<float> rgb;  // size 3*width*height

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), rgb(size_t(3) * w * h, fill) {}

    float& at(int y, int x, int c) { return rgb[(size_t(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return rgb[(size_t(y) * width + x) * 3 + c]; }
};

// Format chosen by extension: .ppm (P6, the bit-exact round-trip format) or
// .png (8-bit RGB, no interlacing).
Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path);

Image load_ppm(const std::string& path);
void save_ppm(const Image& img, const std::string& path);
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

// NCHW tensor with N=1, C=3.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);  // values clamped to [0,1]

// Per-channel min-max normalization to [0,1] for activation dumps; a
// constant channel maps to mid-gray 0.5.
Image channel_to_gray(const Tensor& t, int n, int c);

}  // namespace ldrc
