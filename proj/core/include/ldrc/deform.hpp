#pragma once

#include <optional>

#include "ldrc/tensor.hpp"

namespace ldrc {

// Offset-field layout for deformable convolution: shape [N, 2*K, Ho, Wo]
// with K = kh*kw kernel points in row-major order; channel 2j carries the
// vertical displacement of point j, channel 2j+1 the horizontal one. One
// field is shared across all output channels. This layout is part of the
// checkpoint format.
int offset_channels(int kh, int kw);

// Bilinear interpolation of the four integer neighbours of (py, px) in
// x[n][c], with zero extension: positions fully outside [-1,H]x[-1,W]
// contribute nothing.
float bilinear_sample(const Tensor& x, int n, int c, float py, float px);

struct BilinearGrad {
    float value;
    float d_py;  // partial w.r.t. the vertical position
    float d_px;
};
BilinearGrad bilinear_sample_grad(const Tensor& x, int n, int c, float py, float px);

// y(p0) = sum_l w(p_l) * x(p0 + dilation*p_l + offset_l), Eq.-style deformable
// convolution with learned per-location offsets. Differentiable w.r.t. input,
// weight, bias and offsets.
Tensor deform_conv2d(const Tensor& x, const Tensor& offsets, const Tensor& weight,
                     const std::optional<Tensor>& bias = std::nullopt, int stride = 1,
                     int padding = 0, int dilation = 1);

namespace debug {
// Fault-injection hooks for verifying that the gradcheck and bench gates
// actually catch a broken kernel. Never set outside those negative tests.
void set_deform_backward_fault(bool on);
void set_deform_forward_fault(bool on);
}  // namespace debug

}  // namespace ldrc
