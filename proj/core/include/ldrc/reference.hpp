#pragma once

#include <optional>

#include "ldrc/tensor.hpp"

namespace ldrc::ref {

// Brute-force oracle kernels. Deliberately written as plain nested loops with
// no autograd, no accumulator tricks and no parallelism, independent of the
// production paths they are checked against. Used by tests and by the bench
// correctness gate.

Tensor conv2d(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias = std::nullopt, int stride = 1,
              int padding = 0, int dilation = 1);

// x translated by (dy, dx) with zero fill: out[h][w] = x[h - dy][w - dx].
Tensor shift_image(const Tensor& x, int dy, int dx);

}  // namespace ldrc::ref
