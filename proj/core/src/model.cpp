#include "ldrc/model.hpp"

#include <algorithm>
#include <sstream>

namespace ldrc {

std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::S1: return "s1";
        case Ablation::S2: return "s2";
        case Ablation::S3: return "s3";
        case Ablation::S4: return "s4";
        case Ablation::S5: return "s5";
    }
    return "full";
}

Ablation parse_ablation(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (s == "full") return Ablation::Full;
    if (s == "s1") return Ablation::S1;
    if (s == "s2") return Ablation::S2;
    if (s == "s3") return Ablation::S3;
    if (s == "s4") return Ablation::S4;
    if (s == "s5") return Ablation::S5;
    throw Error("unknown ablation '" + name + "' (expected full|s1|s2|s3|s4|s5)");
}

namespace {

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw Error("config: bad integer '" + tok + "' in " + key);
        }
    }
    if (out.empty()) throw Error("config: empty list for " + key);
    return out;
}

std::string join_int_list(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

int parse_int(const std::string& v, const std::string& key) {
    try {
        return std::stoi(v);
    } catch (const std::exception&) {
        throw Error("config: bad integer '" + v + "' for " + key);
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (num_scales != 3) throw Error("config: num_scales is fixed at 3");
    if (base_channels < 1) throw Error("config: base_channels must be positive");
    if (rdb_count < 1) throw Error("config: rdb_count must be positive");
    if (rdb_growth < 1) throw Error("config: rdb_growth must be positive");
    if (ca_reduction < 1) throw Error("config: ca_reduction must be positive");
    for (int d : mpb_dilations)
        if (d < 1) throw Error("config: mpb_dilations must be positive");
    for (int d : msib_rb_depths)
        if (d < 1) throw Error("config: msib_rb_depths must be positive");
}

std::string ModelConfig::serialize() const {
    std::string s;
    s += "base_channels=" + std::to_string(base_channels) + "\n";
    s += "num_scales=" + std::to_string(num_scales) + "\n";
    s += "mpb_dilations=" + join_int_list(mpb_dilations) + "\n";
    s += "rdb_count=" + std::to_string(rdb_count) + "\n";
    s += "rdb_growth=" + std::to_string(rdb_growth) + "\n";
    s += "msib_rb_depths=" + join_int_list(msib_rb_depths) + "\n";
    s += "ca_reduction=" + std::to_string(ca_reduction) + "\n";
    s += "ablation=" + ablation_name(ablation) + "\n";
    return s;
}

void ModelConfig::set(const std::string& key, const std::string& value) {
    if (key == "base_channels") base_channels = parse_int(value, key);
    else if (key == "num_scales") num_scales = parse_int(value, key);
    else if (key == "mpb_dilations") mpb_dilations = parse_int_list(value, key);
    else if (key == "rdb_count") rdb_count = parse_int(value, key);
    else if (key == "rdb_growth") rdb_growth = parse_int(value, key);
    else if (key == "msib_rb_depths") msib_rb_depths = parse_int_list(value, key);
    else if (key == "ca_reduction") ca_reduction = parse_int(value, key);
    else if (key == "ablation") ablation = parse_ablation(value);
    else throw Error("config: unknown key '" + key + "'");
}

ModelConfig ModelConfig::parse(const std::string& text) {
    // Gather pairs first: rdb_growth defaults to base_channels/2, so an
    // explicit base_channels has to land before the growth default is fixed.
    std::vector<std::pair<std::string, std::string>> pairs;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        if (line[start] == '#') continue;
        size_t eq = line.find('=', start);
        if (eq == std::string::npos) throw Error("config: expected key=value, got '" + line + "'");
        std::string key = line.substr(start, eq - start);
        std::string value = line.substr(eq + 1);
        auto strip = [](std::string& s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        strip(key);
        strip(value);
        pairs.emplace_back(key, value);
    }

    ModelConfig cfg;
    bool growth_explicit = false;
    for (const auto& [k, v] : pairs) {
        if (k == "rdb_growth") growth_explicit = true;
        if (k == "base_channels") {
            cfg.set(k, v);
            cfg.rdb_growth = std::max(1, cfg.base_channels / 2);
        }
    }
    for (const auto& [k, v] : pairs) {
        if (k == "base_channels") continue;
        if (k == "rdb_growth" && !growth_explicit) continue;
        cfg.set(k, v);
    }
    cfg.validate();
    return cfg;
}

// ---- DAEncoder -------------------------------------------------------------

DAEncoder::DAEncoder(const ModelConfig& cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    use_deform = cfg.ablation != Ablation::S4;
    stem = Conv2d(3, cfg.base_channels, 3, 1, 1, 1, WeightInit::KaimingUniform, rng);
    for (int s = 0; s < cfg.num_scales; ++s) {
        int width = cfg.base_channels << s;
        for (int i = 0; i < 2; ++i) {
            if (use_deform)
                deform_layers.emplace_back(width, width, 3, 1, 1, 1, rng);
            else
                plain_layers.emplace_back(width, width, 3, 1, 1, 1, WeightInit::KaimingUniform,
                                          rng);
        }
        if (s + 1 < cfg.num_scales)
            downs.emplace_back(width, width * 2, 3, 2, 1, 1, WeightInit::KaimingUniform, rng);
    }
}

DegradationRep DAEncoder::forward(const Tensor& rainy, std::map<std::string, Tensor>* taps) const {
    const Shape4& s = rainy.shape();
    if (s.c != 3) throw Error("daencoder: expected a 3-channel input, got " + s.str());
    if (s.h % 4 != 0 || s.w % 4 != 0)
        throw Error("daencoder: H and W must be divisible by 4, got " + s.str());

    auto layer = [&](int idx, const Tensor& x) {
        return use_deform ? relu(deform_layers[size_t(idx)].forward(x))
                          : relu(plain_layers[size_t(idx)].forward(x));
    };

    DegradationRep rep;
    Tensor f = relu(stem.forward(rainy));
    for (int sc = 0; sc < cfg.num_scales; ++sc) {
        f = layer(2 * sc, f);
        f = layer(2 * sc + 1, f);
        if (sc == 0) rep.deg1 = f;
        if (sc == 1) rep.deg2 = f;
        if (sc == 2) rep.deg3 = f;
        if (sc + 1 < cfg.num_scales) f = relu(downs[size_t(sc)].forward(f));
    }
    if (taps) {
        (*taps)["deg1"] = rep.deg1;
        (*taps)["deg2"] = rep.deg2;
        (*taps)["deg3"] = rep.deg3;
    }
    return rep;
}

void DAEncoder::collect(const std::string& prefix, ParamMap& out) const {
    stem.collect(prefix + ".stem", out);
    for (size_t i = 0; i < deform_layers.size(); ++i)
        deform_layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    for (size_t i = 0; i < plain_layers.size(); ++i)
        plain_layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    for (size_t i = 0; i < downs.size(); ++i)
        downs[i].collect(prefix + ".down" + std::to_string(i), out);
}

// ---- ConstraintNet ---------------------------------------------------------

ConstraintNet::ConstraintNet(const ModelConfig& cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    if (cfg.rdb_count < 3)
        throw Error("constraint net: rdb_count must be >= 3 so all three degradation scales "
                    "have an injection site");
    const int base = cfg.base_channels;
    const bool use_msi = cfg.ablation != Ablation::S5;
    stem = Conv2d(3, base, 3, 1, 1, 1, WeightInit::KaimingUniform, rng);
    for (int i = 0; i < cfg.rdb_count; ++i) rdbs.emplace_back(base, cfg.rdb_growth, rng);

    if (use_msi)
        msi_full.emplace(base, base, cfg.msib_rb_depths, cfg.ca_reduction, rng);
    else
        cat_full.emplace(base, base, rng);

    down_half = Conv2d(base, 2 * base, 3, 2, 1, 1, WeightInit::KaimingUniform, rng);
    if (use_msi)
        msi_half.emplace(2 * base, 2 * base, cfg.msib_rb_depths, cfg.ca_reduction, rng);
    else
        cat_half.emplace(2 * base, 2 * base, rng);
    up_half = Conv2d(2 * base, base, 3, 1, 1, 1, WeightInit::Zero, rng);

    down_q1 = Conv2d(base, 2 * base, 3, 2, 1, 1, WeightInit::KaimingUniform, rng);
    down_q2 = Conv2d(2 * base, 4 * base, 3, 2, 1, 1, WeightInit::KaimingUniform, rng);
    if (use_msi)
        msi_quarter.emplace(4 * base, 4 * base, cfg.msib_rb_depths, cfg.ca_reduction, rng);
    else
        cat_quarter.emplace(4 * base, 4 * base, rng);
    up_q1 = Conv2d(4 * base, 2 * base, 3, 1, 1, 1, WeightInit::KaimingUniform, rng);
    up_q2 = Conv2d(2 * base, base, 3, 1, 1, 1, WeightInit::Zero, rng);

    head = Conv2d(base, 3, 3, 1, 1, 1, WeightInit::KaimingUniform, rng);
}

int ConstraintNet::msi_block_count() const {
    return int(msi_full.has_value()) + int(msi_half.has_value()) + int(msi_quarter.has_value());
}

Tensor ConstraintNet::forward(const Tensor& clean, const DegradationRep& deg) const {
    const Shape4& s = clean.shape();
    if (s.c != 3) throw Error("constraint net: expected a 3-channel input, got " + s.str());
    if (s.h % 4 != 0 || s.w % 4 != 0)
        throw Error("constraint net: H and W must be divisible by 4, got " + s.str());
    const Shape4& d1 = deg.deg1.shape();
    if (d1.h != s.h || d1.w != s.w)
        throw Error("constraint net: clean image " + s.str() +
                    " does not match degradation base resolution " + d1.str());

    auto fuse = [&](const std::optional<MsiBlock>& msi, const std::optional<ConcatFuse>& cat,
                    const Tensor& f, const Tensor& dg) {
        return msi ? msi->forward(f, dg) : cat->forward(f, dg);
    };

    Tensor f = relu(stem.forward(clean));
    for (int i = 0; i < cfg.rdb_count; ++i) {
        f = rdbs[size_t(i)].forward(f);
        if (i == 0) {
            f = fuse(msi_full, cat_full, f, deg.deg1);
        } else if (i == 1) {
            Tensor g = relu(down_half.forward(f));
            g = fuse(msi_half, cat_half, g, deg.deg2);
            g = up_half.forward(upsample2x(g, UpsampleMode::Nearest));
            f = add(f, g);
        } else if (i == 2) {
            Tensor g = relu(down_q1.forward(f));
            g = relu(down_q2.forward(g));
            g = fuse(msi_quarter, cat_quarter, g, deg.deg3);
            g = relu(up_q1.forward(upsample2x(g, UpsampleMode::Nearest)));
            g = up_q2.forward(upsample2x(g, UpsampleMode::Nearest));
            f = add(f, g);
        }
    }
    return head.forward(f);
}

void ConstraintNet::collect(const std::string& prefix, ParamMap& out) const {
    stem.collect(prefix + ".stem", out);
    for (size_t i = 0; i < rdbs.size(); ++i)
        rdbs[i].collect(prefix + ".rdb" + std::to_string(i), out);
    if (msi_full) msi_full->collect(prefix + ".msi_full", out);
    if (cat_full) cat_full->collect(prefix + ".cat_full", out);
    down_half.collect(prefix + ".down_half", out);
    if (msi_half) msi_half->collect(prefix + ".msi_half", out);
    if (cat_half) cat_half->collect(prefix + ".cat_half", out);
    up_half.collect(prefix + ".up_half", out);
    down_q1.collect(prefix + ".down_q1", out);
    down_q2.collect(prefix + ".down_q2", out);
    if (msi_quarter) msi_quarter->collect(prefix + ".msi_quarter", out);
    if (cat_quarter) cat_quarter->collect(prefix + ".cat_quarter", out);
    up_q1.collect(prefix + ".up_q1", out);
    up_q2.collect(prefix + ".up_q2", out);
    head.collect(prefix + ".head", out);
}

// ---- DerainNet -------------------------------------------------------------

DerainNet::DerainNet(const ModelConfig& cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    const int base = cfg.base_channels;
    use_deg = cfg.ablation != Ablation::S2;
    use_msi = use_deg && cfg.ablation != Ablation::S5;

    stem = Conv2d(3, base, 3, 1, 1, 1, WeightInit::KaimingUniform, rng);
    for (int i = 0; i < kLevels; ++i) {
        int width = base << i;
        enc_mpb.emplace_back(width, cfg.mpb_dilations, cfg.ca_reduction, rng);
        downs.emplace_back(width, width * 2, 3, 2, 1, 1, WeightInit::KaimingUniform, rng);
    }
    bottleneck = MultiPathBlock(base << kLevels, cfg.mpb_dilations, cfg.ca_reduction, rng);

    up_convs.resize(size_t(kLevels));
    skip_fuse.resize(size_t(kLevels));
    if (use_msi) msi.resize(size_t(kLevels));
    if (use_deg && !use_msi) cat_fuse.resize(size_t(kLevels));
    dec_mpb.resize(size_t(kLevels));
    for (int i = kLevels - 1; i >= 0; --i) {
        int width = base << i;
        up_convs[size_t(i)] =
            Conv2d(width * 2, width, 3, 1, 1, 1, WeightInit::KaimingUniform, rng);
        skip_fuse[size_t(i)] =
            Conv2d(width * 2, width, 1, 1, 0, 1, WeightInit::KaimingUniform, rng);
        if (use_msi)
            msi[size_t(i)] = MsiBlock(width, width, cfg.msib_rb_depths, cfg.ca_reduction, rng);
        else if (use_deg)
            cat_fuse[size_t(i)] = ConcatFuse(width, width, rng);
        dec_mpb[size_t(i)] = MultiPathBlock(width, cfg.mpb_dilations, cfg.ca_reduction, rng);
    }
    head = Conv2d(base, 3, 3, 1, 1, 1, WeightInit::KaimingUniform, rng);
}

Tensor DerainNet::forward(const Tensor& rainy, const DegradationRep* deg,
                          std::map<std::string, Tensor>* taps) const {
    const Shape4& s = rainy.shape();
    if (s.c != 3) throw Error("derain net: expected a 3-channel input, got " + s.str());
    if (s.h % 4 != 0 || s.w % 4 != 0)
        throw Error("derain net: H and W must be divisible by 4, got " + s.str());
    if (use_deg && deg == nullptr)
        throw Error("derain net: this configuration requires degradation features");

    Tensor f = relu(stem.forward(rainy));
    std::vector<Tensor> skips;
    skips.reserve(size_t(kLevels));
    for (int i = 0; i < kLevels; ++i) {
        Tensor e = enc_mpb[size_t(i)].forward(f);
        skips.push_back(e);
        if (taps) (*taps)["enc" + std::to_string(i + 1)] = e;
        f = relu(downs[size_t(i)].forward(e));
    }
    f = bottleneck.forward(f);
    if (taps) (*taps)["bottleneck"] = f;

    for (int i = kLevels - 1; i >= 0; --i) {
        f = upsample2x(f, UpsampleMode::Nearest);
        f = relu(up_convs[size_t(i)].forward(f));
        const Shape4& sk = skips[size_t(i)].shape();
        if (f.shape().h != sk.h || f.shape().w != sk.w) f = crop2d(f, sk.h, sk.w);
        f = skip_fuse[size_t(i)].forward(concat_channels({f, skips[size_t(i)]}));
        if (use_deg) {
            const Tensor& dg = i == 0 ? deg->deg1 : (i == 1 ? deg->deg2 : deg->deg3);
            f = use_msi ? msi[size_t(i)].forward(f, dg) : cat_fuse[size_t(i)].forward(f, dg);
        }
        f = dec_mpb[size_t(i)].forward(f);
        if (taps) (*taps)["dec" + std::to_string(i + 1)] = f;
    }
    Tensor out = head.forward(f);
    if (taps) (*taps)["bhat"] = out;
    return out;
}

void DerainNet::collect(const std::string& prefix, ParamMap& out) const {
    stem.collect(prefix + ".stem", out);
    for (int i = 0; i < kLevels; ++i) {
        enc_mpb[size_t(i)].collect(prefix + ".enc" + std::to_string(i), out);
        downs[size_t(i)].collect(prefix + ".down" + std::to_string(i), out);
    }
    bottleneck.collect(prefix + ".bottleneck", out);
    for (int i = 0; i < kLevels; ++i) {
        up_convs[size_t(i)].collect(prefix + ".up" + std::to_string(i), out);
        skip_fuse[size_t(i)].collect(prefix + ".skip_fuse" + std::to_string(i), out);
        if (use_msi) msi[size_t(i)].collect(prefix + ".msi" + std::to_string(i), out);
        if (use_deg && !use_msi)
            cat_fuse[size_t(i)].collect(prefix + ".cat_fuse" + std::to_string(i), out);
        dec_mpb[size_t(i)].collect(prefix + ".dec" + std::to_string(i), out);
    }
    head.collect(prefix + ".head", out);
}

// ---- S1Head ----------------------------------------------------------------

S1Head::S1Head(const ModelConfig& cfg, Rng& rng)
    : conv1(7 * cfg.base_channels, cfg.base_channels, 3, 1, 1, 1, WeightInit::KaimingUniform,
            rng),
      conv2(cfg.base_channels, 3, 3, 1, 1, 1, WeightInit::KaimingUniform, rng) {}

Tensor S1Head::forward(const Tensor& rainy, const DegradationRep& deg) const {
    Tensor d2 = upsample2x(deg.deg2, UpsampleMode::Nearest);
    Tensor d3 = upsample2x(upsample2x(deg.deg3, UpsampleMode::Nearest), UpsampleMode::Nearest);
    Tensor residual = conv2.forward(relu(conv1.forward(concat_channels({deg.deg1, d2, d3}))));
    return sub(rainy, residual);
}

void S1Head::collect(const std::string& prefix, ParamMap& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
}

// ---- Model -----------------------------------------------------------------

Model::Model(const ModelConfig& cfg_, std::uint64_t seed) : cfg(cfg_) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x6d6f64656cULL));
    if (cfg.ablation != Ablation::S2) encoder = std::make_unique<DAEncoder>(cfg, rng);
    bool has_constraint = cfg.ablation != Ablation::S2 && cfg.ablation != Ablation::S3;
    if (has_constraint) constraint = std::make_unique<ConstraintNet>(cfg, rng);
    if (cfg.ablation == Ablation::S1)
        head = std::make_unique<S1Head>(cfg, rng);
    else
        derain = std::make_unique<DerainNet>(cfg, rng);
}

DegradationRep Model::encode(const Tensor& rainy, std::map<std::string, Tensor>* taps) const {
    if (!encoder) throw Error("model: the " + ablation_name(cfg.ablation) +
                              " configuration has no degradation encoder");
    return encoder->forward(rainy, taps);
}

Tensor Model::restore(const Tensor& rainy, std::map<std::string, Tensor>* taps) const {
    if (head) {
        DegradationRep deg = encode(rainy, taps);
        Tensor out = head->forward(rainy, deg);
        if (taps) (*taps)["bhat"] = out;
        return out;
    }
    if (derain->use_deg) {
        DegradationRep deg = encode(rainy, taps);
        return derain->forward(rainy, &deg, taps);
    }
    return derain->forward(rainy, nullptr, taps);
}

Tensor Model::reconstruct_rain(const Tensor& clean, const DegradationRep& deg) const {
    if (!constraint) throw Error("model: the " + ablation_name(cfg.ablation) +
                                 " configuration has no constraint net");
    return constraint->forward(clean, deg);
}

ParamMap Model::parameters() const {
    ParamMap out;
    if (encoder) encoder->collect("encoder", out);
    if (constraint) constraint->collect("constraint", out);
    if (derain) derain->collect("derain", out);
    if (head) head->collect("head", out);
    return out;
}

void Model::set_encoder_frozen(bool frozen) {
    if (!encoder) return;
    ParamMap p;
    encoder->collect("encoder", p);
    for (auto& [name, t] : p) t.set_requires_grad(!frozen);
}

Model::Audit Model::audit() const {
    Audit a;
    a.has_encoder = encoder != nullptr;
    a.has_constraint = constraint != nullptr;
    a.has_derain = derain != nullptr;
    a.has_head = head != nullptr;
    if (encoder) a.deform_layers = encoder->deform_layer_count();
    if (derain) a.msi_blocks += derain->msi_block_count();
    if (constraint) a.msi_blocks += constraint->msi_block_count();
    return a;
}

Tensor pad_reflect_to_multiple(const Tensor& x, int multiple) {
    const Shape4& s = x.shape();
    int ph = (multiple - s.h % multiple) % multiple;
    int pw = (multiple - s.w % multiple) % multiple;
    if (ph == 0 && pw == 0) return x;
    Shape4 os{s.n, s.c, s.h + ph, s.w + pw};
    Tensor y(os);
    auto reflect = [](int i, int n) {
        // mirror across the last row/column without repeating it
        if (i < n) return i;
        int r = 2 * n - 2 - i;
        return r < 0 ? 0 : r;
    };
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < os.h; ++h)
                for (int w = 0; w < os.w; ++w)
                    y.at(n, c, h, w) = x.at(n, c, reflect(h, s.h), reflect(w, s.w));
    return y;
}

}  // namespace ldrc
