#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "ldrc/model.hpp"
#include "ldrc/rain.hpp"

namespace ldrc {

enum class TrainMode { TwoPhase, Joint };
enum class Phase : std::uint8_t { Constraint = 0, Derain = 1, Joint = 2 };

std::string phase_name(Phase p);
Phase parse_phase(const std::string& name);

struct TrainConfig {
    double lr_init = 3e-4;
    double lr_final = 1e-6;
    int total_steps = 2000;
    int batch_size = 1;
    int patch_size = 64;  // reference setting is 256, desk default 64
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::TwoPhase;

    void validate() const;
    // Returns false when the key does not belong to TrainConfig.
    bool try_set(const std::string& key, const std::string& value);
};

// lr_final + 0.5*(lr_init - lr_final)*(1 + cos(pi*step/total_steps)),
// monotone non-increasing; step must lie in [0, total_steps].
double cosine_lr(int step, const TrainConfig& cfg);

// Bias-corrected Adam over a fixed named parameter set, in parameter-name
// order. Moments are stored f32 (the checkpoint carries them); the update
// itself runs in f64.
class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(const ParamMap& params);

    void zero_grad();
    void step(double lr);  // requires every parameter to have a populated grad

    std::int64_t steps_taken() const { return t_; }
    void set_steps_taken(std::int64_t t) { t_ = t; }

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<float>& first_moment(size_t i) const { return m_[i]; }
    const std::vector<float>& second_moment(size_t i) const { return v_[i]; }
    void set_moments(size_t i, std::vector<float> m, std::vector<float> v);

private:
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
};

// Paired data held in memory as 1x3xHxW tensors.
struct LoadedPair {
    Tensor rainy, clean;
};
std::vector<LoadedPair> load_pairs(const PairedDataset& ds);

struct Batch {
    Tensor rainy, clean;
};

// Random crop + horizontal flip, a pure function of (cfg.seed, step): the
// patch sequence does not depend on loader timing or thread count.
Batch sample_batch(const std::vector<LoadedPair>& pairs, const TrainConfig& cfg, int step);

struct StepStats {
    double loss = 0.0;
    double lr = 0.0;
    // populated in joint mode only
    double loss_derain = 0.0;
    double loss_constraint = 0.0;
};

// One optimization phase over one model. Construction selects the trained
// parameter subset and applies the freeze protocol (phase Derain freezes the
// encoder); callers drive step() so they can log or stop early.
class Trainer {
public:
    Trainer(Model& model, Phase phase, const std::vector<LoadedPair>& data, TrainConfig cfg);

    StepStats step();
    int current_step() const { return step_; }
    Adam& optimizer() { return opt_; }
    Phase phase() const { return phase_; }

private:
    Model& model_;
    Phase phase_;
    const std::vector<LoadedPair>& data_;
    TrainConfig cfg_;
    Adam opt_;
    int step_ = 0;

    static ParamMap select_params(const Model& m, Phase phase);
};

// Whole-dataset diagnostics on full images (no optimization).
double dataset_constraint_loss(const Model& m, const std::vector<LoadedPair>& pairs);
double dataset_restore_psnr(const Model& m, const std::vector<LoadedPair>& pairs);
double dataset_rainy_psnr(const std::vector<LoadedPair>& pairs);

// "step\tloss\tlr" with lr in trimmed scientific form, e.g. "120\t0.0153\t2.9e-4".
std::string loss_log_line(int step, double loss, double lr);

}  // namespace ldrc
