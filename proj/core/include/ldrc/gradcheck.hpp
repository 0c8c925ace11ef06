#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ldrc/rng.hpp"
#include "ldrc/tensor.hpp"

namespace ldrc {

// Central finite differences against the analytic backward pass, with the
// probe loss L = sum_i w_i * out_i accumulated in f64 from f32 outputs.
// Relative error is |analytic - numeric| / max(1, |numeric|).
double finite_diff_check(const std::function<Tensor()>& forward, std::vector<Tensor> inputs,
                         Rng& rng, double h = 1e-3);

Tensor random_tensor(Shape4 shape, Rng& rng, float lo, float hi, bool requires_grad = true);

struct GradCheckEntry {
    std::string op;      // unique across the registry
    std::string module;  // tensor | deform | arch
    double threshold = 1e-3;
    std::function<double(std::uint64_t seed)> run;  // worst relative error for one seed
};

// Every differentiable op registered exactly once.
const std::vector<GradCheckEntry>& gradcheck_registry();

struct GradCheckResult {
    std::string op;
    std::string module;
    double worst = 0.0;
    double threshold = 1e-3;
    bool pass = false;
};

// module_filter: all | tensor | deform | arch. Each entry runs `seeds` times
// with derived seeds; the reported error is the worst seen.
std::vector<GradCheckResult> run_gradchecks(const std::string& module_filter, int seeds,
                                            std::uint64_t base_seed = 2024);

}  // namespace ldrc
