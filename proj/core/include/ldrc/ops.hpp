#pragma once

#include <optional>
#include <vector>

#include "ldrc/tensor.hpp"

namespace ldrc {

enum class UpsampleMode { Nearest, Bilinear };

// Output spatial extent of a convolution/pool window sweep.
int conv_out_dim(int in, int kernel, int stride, int padding, int dilation);

// 2-D convolution over NCHW with zero padding. Weight layout is
// [Cout, Cin, kh, kw]; bias, when present, is [1, Cout, 1, 1].
// Storage is f32, window reductions accumulate in f64.
Tensor conv2d(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias = std::nullopt, int stride = 1,
              int padding = 0, int dilation = 1);

// Mean over k x k windows; zero padding counts toward the k*k divisor.
Tensor avgpool2d(const Tensor& x, int kernel, int stride = 1, int padding = 0);

// Per-channel spatial mean, [N, C, 1, 1].
Tensor global_avgpool(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float alpha);

// y[n,c,h,w] = x[n,c,h,w] * s[n,c,0,0]; s broadcasts over H and W.
Tensor scale_channels(const Tensor& x, const Tensor& s);

// Channel concatenation; inputs must agree on N, H, W.
Tensor concat_channels(const std::vector<Tensor>& xs);

// Doubles H and W. Bilinear follows the align-corners=false convention
// (edges replicate).
Tensor upsample2x(const Tensor& x, UpsampleMode mode);

// Top-left h x w window; gradient zero-pads back to the input extent.
Tensor crop2d(const Tensor& x, int h, int w);

// Mean squared difference, scalar output.
Tensor mse_loss(const Tensor& a, const Tensor& b);

}  // namespace ldrc
