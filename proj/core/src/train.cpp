#include "ldrc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numbers>

#include "ldrc/metrics.hpp"

namespace ldrc {

std::string phase_name(Phase p) {
    switch (p) {
        case Phase::Constraint: return "constraint";
        case Phase::Derain: return "derain";
        case Phase::Joint: return "joint";
    }
    return "constraint";
}

Phase parse_phase(const std::string& name) {
    if (name == "constraint") return Phase::Constraint;
    if (name == "derain") return Phase::Derain;
    if (name == "joint") return Phase::Joint;
    throw Error("unknown phase '" + name + "' (expected constraint|derain|joint)");
}

void TrainConfig::validate() const {
    if (lr_init <= 0.0 || lr_final <= 0.0) throw Error("train: learning rates must be positive");
    if (lr_final > lr_init) throw Error("train: lr_final must not exceed lr_init");
    if (total_steps < 1) throw Error("train: total_steps must be positive");
    if (batch_size < 1) throw Error("train: batch_size must be positive");
    if (patch_size < 4 || patch_size % 4 != 0)
        throw Error("train: patch_size must be a positive multiple of 4");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw Error("train: loss weights must be non-negative");
}

bool TrainConfig::try_set(const std::string& key, const std::string& value) {
    auto to_d = [&](const char* k) {
        try {
            return std::stod(value);
        } catch (const std::exception&) {
            throw Error("config: bad number '" + value + "' for " + k);
        }
    };
    auto to_i = [&](const char* k) {
        try {
            return std::stoi(value);
        } catch (const std::exception&) {
            throw Error("config: bad integer '" + value + "' for " + k);
        }
    };
    if (key == "lr_init") lr_init = to_d("lr_init");
    else if (key == "lr_final") lr_final = to_d("lr_final");
    else if (key == "total_steps") total_steps = to_i("total_steps");
    else if (key == "batch_size") batch_size = to_i("batch_size");
    else if (key == "patch_size") patch_size = to_i("patch_size");
    else if (key == "lambda1") lambda1 = to_d("lambda1");
    else if (key == "lambda2") lambda2 = to_d("lambda2");
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "mode") {
        if (value == "two_phase") mode = TrainMode::TwoPhase;
        else if (value == "joint") mode = TrainMode::Joint;
        else throw Error("config: mode must be two_phase or joint");
    } else {
        return false;
    }
    return true;
}

double cosine_lr(int step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.total_steps)
        throw Error("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                    std::to_string(cfg.total_steps) + "]");
    double phase = std::numbers::pi * (double(step) / double(cfg.total_steps));
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(phase));
}

Adam::Adam(const ParamMap& params) {
    for (const auto& [name, t] : params) {
        names_.push_back(name);
        params_.push_back(t);
        m_.emplace_back(size_t(t.numel()), 0.0f);
        v_.emplace_back(size_t(t.numel()), 0.0f);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const auto& g = p.grad();
        if (g.size() != p.values().size())
            throw Error("adam: missing gradient for parameter '" + names_[i] + "'");
        auto& m = m_[i];
        auto& v = v_[i];
        auto& w = p.values();
        for (size_t j = 0; j < w.size(); ++j) {
            double gj = g[j];
            double mj = beta1 * m[j] + (1.0 - beta1) * gj;
            double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            m[j] = float(mj);
            v[j] = float(vj);
            double mhat = mj / bc1;
            double vhat = vj / bc2;
            w[j] = float(w[j] - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

void Adam::set_moments(size_t i, std::vector<float> m, std::vector<float> v) {
    if (m.size() != m_[i].size() || v.size() != v_[i].size())
        throw Error("adam: moment size mismatch for parameter '" + names_[i] + "'");
    m_[i] = std::move(m);
    v_[i] = std::move(v);
}

std::vector<LoadedPair> load_pairs(const PairedDataset& ds) {
    namespace fs = std::filesystem;
    std::vector<LoadedPair> out;
    out.reserve(ds.pairs.size());
    for (const auto& p : ds.pairs) {
        Image rainy = load_image((fs::path(ds.root) / p.rainy_path).string());
        Image clean = load_image((fs::path(ds.root) / p.clean_path).string());
        if (rainy.width != clean.width || rainy.height != clean.height)
            throw Error("dataset: pair '" + p.rainy_path + "' / '" + p.clean_path +
                        "' differs in size");
        out.push_back({image_to_tensor(rainy), image_to_tensor(clean)});
    }
    return out;
}

Batch sample_batch(const std::vector<LoadedPair>& pairs, const TrainConfig& cfg, int step) {
    if (pairs.empty()) throw Error("sample_batch: empty dataset");
    const int ps = cfg.patch_size;
    Rng rng(derive_seed(cfg.seed ^ 0x747261696eULL, std::uint64_t(step)));
    Batch b{Tensor({cfg.batch_size, 3, ps, ps}), Tensor({cfg.batch_size, 3, ps, ps})};
    for (int bi = 0; bi < cfg.batch_size; ++bi) {
        const auto& pair = pairs[size_t(rng.uniform_int(0, std::int64_t(pairs.size()) - 1))];
        const Shape4& s = pair.rainy.shape();
        if (s.h < ps || s.w < ps)
            throw Error("sample_batch: dataset images " + s.str() +
                        " are smaller than the patch size " + std::to_string(ps));
        int oy = int(rng.uniform_int(0, s.h - ps));
        int ox = int(rng.uniform_int(0, s.w - ps));
        bool flip = rng.coin();
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < ps; ++y)
                for (int x = 0; x < ps; ++x) {
                    int sx = flip ? ox + ps - 1 - x : ox + x;
                    b.rainy.at(bi, c, y, x) = pair.rainy.at(0, c, oy + y, sx);
                    b.clean.at(bi, c, y, x) = pair.clean.at(0, c, oy + y, sx);
                }
    }
    return b;
}

ParamMap Trainer::select_params(const Model& m, Phase phase) {
    ParamMap all = m.parameters();
    ParamMap out;
    auto want = [&](const std::string& name) {
        switch (phase) {
            case Phase::Constraint:
                return name.starts_with("encoder.") || name.starts_with("constraint.");
            case Phase::Derain:
                return name.starts_with("derain.") || name.starts_with("head.");
            case Phase::Joint:
                return true;
        }
        return false;
    };
    for (const auto& [name, t] : all)
        if (want(name)) out.emplace(name, t);
    return out;
}

Trainer::Trainer(Model& model, Phase phase, const std::vector<LoadedPair>& data, TrainConfig cfg)
    : model_(model), phase_(phase), data_(data), cfg_(cfg), opt_(select_params(model, phase)) {
    cfg_.validate();
    if (data_.empty()) throw Error("trainer: empty dataset");
    if (phase == Phase::Constraint && (!model.encoder || !model.constraint))
        throw Error("trainer: the " + ablation_name(model.cfg.ablation) +
                    " configuration has no constraint pretraining phase");
    if (phase == Phase::Joint && (!model.encoder || !model.constraint))
        throw Error("trainer: joint training needs both the encoder and the constraint net");
    if (phase == Phase::Derain) model.set_encoder_frozen(true);
    if (opt_.names().empty()) throw Error("trainer: no trainable parameters for this phase");
}

StepStats Trainer::step() {
    if (step_ >= cfg_.total_steps) throw Error("trainer: all configured steps already taken");
    Batch b = sample_batch(data_, cfg_, step_);
    double lr = cosine_lr(step_, cfg_);
    opt_.zero_grad();

    StepStats st;
    Tensor loss;
    switch (phase_) {
        case Phase::Constraint: {
            DegradationRep deg = model_.encode(b.rainy);
            loss = mse_loss(model_.reconstruct_rain(b.clean, deg), b.rainy);
            break;
        }
        case Phase::Derain: {
            loss = mse_loss(model_.restore(b.rainy), b.clean);
            break;
        }
        case Phase::Joint: {
            DegradationRep deg = model_.encode(b.rainy);
            Tensor bhat = model_.head ? model_.head->forward(b.rainy, deg)
                                      : model_.derain->forward(b.rainy, &deg);
            Tensor ld = mse_loss(bhat, b.clean);
            Tensor lc = mse_loss(model_.reconstruct_rain(b.clean, deg), b.rainy);
            loss = add(scale(ld, float(cfg_.lambda1)), scale(lc, float(cfg_.lambda2)));
            st.loss_derain = ld.item();
            st.loss_constraint = lc.item();
            break;
        }
    }
    backward(loss);
    opt_.step(lr);
    st.loss = loss.item();
    st.lr = lr;
    ++step_;
    return st;
}

double dataset_constraint_loss(const Model& m, const std::vector<LoadedPair>& pairs) {
    double acc = 0.0;
    for (const auto& p : pairs) {
        DegradationRep deg = m.encode(p.rainy);
        acc += mse_loss(m.reconstruct_rain(p.clean, deg), p.rainy).item();
    }
    return acc / double(pairs.size());
}

double dataset_restore_psnr(const Model& m, const std::vector<LoadedPair>& pairs) {
    double acc = 0.0;
    for (const auto& p : pairs) {
        Image out = tensor_to_image(m.restore(p.rainy));
        acc += psnr(out, tensor_to_image(p.clean));
    }
    return acc / double(pairs.size());
}

double dataset_rainy_psnr(const std::vector<LoadedPair>& pairs) {
    double acc = 0.0;
    for (const auto& p : pairs) acc += psnr(tensor_to_image(p.rainy), tensor_to_image(p.clean));
    return acc / double(pairs.size());
}

std::string loss_log_line(int step, double loss, double lr) {
    char lbuf[32], rbuf[32];
    std::snprintf(lbuf, sizeof lbuf, "%.4g", loss);
    std::snprintf(rbuf, sizeof rbuf, "%.1e", lr);
    // trim exponent zero padding: 2.9e-04 -> 2.9e-4
    std::string lrs(rbuf);
    size_t e = lrs.find('e');
    if (e != std::string::npos) {
        size_t d = e + 1;
        if (d < lrs.size() && (lrs[d] == '+' || lrs[d] == '-')) ++d;
        size_t z = d;
        while (z + 1 < lrs.size() && lrs[z] == '0') ++z;
        lrs.erase(d, z - d);
        if (lrs[e + 1] == '+') lrs.erase(e + 1, 1);
    }
    return std::to_string(step) + "\t" + lbuf + "\t" + lrs;
}

}  // namespace ldrc
