#include "ldrc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace ldrc {

namespace {

constexpr char kMagic[4] = {'L', 'D', 'R', 'C'};

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    out.append(b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    out.append(b, 8);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > buf.size())
            throw Error("checkpoint: '" + path + "' is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return std::uint8_t(buf[pos++]);
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void write_records(std::string& out, const std::map<std::string, Tensor>& records) {
    put_u32(out, std::uint32_t(records.size()));
    for (const auto& [name, t] : records) {
        put_u32(out, std::uint32_t(name.size()));
        out += name;
        out.push_back(char(4));  // rank
        const Shape4& s = t.shape();
        put_u64(out, std::uint64_t(s.n));
        put_u64(out, std::uint64_t(s.c));
        put_u64(out, std::uint64_t(s.h));
        put_u64(out, std::uint64_t(s.w));
        const auto& v = t.values();
        size_t off = out.size();
        out.resize(off + v.size() * sizeof(float));
        std::memcpy(out.data() + off, v.data(), v.size() * sizeof(float));
    }
}

std::map<std::string, Tensor> read_records(Reader& rd) {
    std::map<std::string, Tensor> out;
    std::uint32_t count = rd.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = rd.u32();
        std::string name = rd.bytes(name_len);
        std::uint8_t rank = rd.u8();
        if (rank != 4)
            throw Error("checkpoint: record '" + name + "' has rank " + std::to_string(rank) +
                        ", expected 4");
        std::uint64_t dims[4];
        for (auto& d : dims) d = rd.u64();
        Shape4 shape{int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3])};
        if (shape.numel() <= 0 || shape.numel() > (std::int64_t(1) << 31))
            throw Error("checkpoint: record '" + name + "' has implausible shape");
        std::string raw = rd.bytes(size_t(shape.numel()) * sizeof(float));
        std::vector<float> values(size_t(shape.numel()));
        std::memcpy(values.data(), raw.data(), raw.size());
        out.emplace(name, Tensor(shape, std::move(values)));
    }
    return out;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    out.push_back(char(std::uint8_t(phase)));
    put_u64(out, step);
    std::string cfg = config.serialize();
    put_u32(out, std::uint32_t(cfg.size()));
    out += cfg;
    write_records(out, params);
    write_records(out, moments);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw Error("checkpoint: short write to '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader rd{buf, 0, path};
    std::string magic = rd.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw Error("checkpoint: '" + path + "' has a bad magic, not an LDRC checkpoint");
    std::uint32_t version = rd.u32();
    if (version != kVersion)
        throw Error("checkpoint: '" + path + "' has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kVersion));
    Checkpoint ckpt;
    std::uint8_t phase = rd.u8();
    if (phase > 2) throw Error("checkpoint: '" + path + "' has an invalid phase tag");
    ckpt.phase = Phase(phase);
    ckpt.step = rd.u64();
    std::uint32_t cfg_len = rd.u32();
    ckpt.config = ModelConfig::parse(rd.bytes(cfg_len));
    ckpt.params = read_records(rd);
    ckpt.moments = read_records(rd);
    if (rd.pos != buf.size())
        throw Error("checkpoint: '" + path + "' has trailing bytes");
    return ckpt;
}

Checkpoint snapshot(const Model& model, const Adam* opt, Phase phase, std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.phase = phase;
    ckpt.step = step;
    ckpt.config = model.cfg;
    for (const auto& [name, t] : model.parameters()) ckpt.params.emplace(name, t.detach());
    if (opt) {
        for (size_t i = 0; i < opt->names().size(); ++i) {
            const std::string& name = opt->names()[i];
            auto it = ckpt.params.find(name);
            if (it == ckpt.params.end())
                throw Error("checkpoint: optimizer tracks unknown parameter '" + name + "'");
            Shape4 shape = it->second.shape();
            ckpt.moments.emplace(name + "/m",
                                 Tensor(shape, std::vector<float>(opt->first_moment(i))));
            ckpt.moments.emplace(name + "/v",
                                 Tensor(shape, std::vector<float>(opt->second_moment(i))));
        }
    }
    return ckpt;
}

void restore_model(Model& model, const Checkpoint& ckpt) {
    ParamMap params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw Error("checkpoint: parameter count mismatch (model " +
                    std::to_string(params.size()) + ", checkpoint " +
                    std::to_string(ckpt.params.size()) + "); configs differ");
    for (auto& [name, t] : params) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end())
            throw Error("checkpoint: parameter '" + name + "' missing from checkpoint");
        if (!(it->second.shape() == t.shape()))
            throw Error("checkpoint: parameter '" + name + "' has shape " +
                        it->second.shape().str() + ", model expects " + t.shape().str());
        t.values() = it->second.values();
    }
    if (ckpt.phase == Phase::Derain) model.set_encoder_frozen(true);
}

void restore_optimizer(Adam& opt, const Checkpoint& ckpt) {
    for (size_t i = 0; i < opt.names().size(); ++i) {
        const std::string& name = opt.names()[i];
        auto m = ckpt.moments.find(name + "/m");
        auto v = ckpt.moments.find(name + "/v");
        if (m == ckpt.moments.end() || v == ckpt.moments.end()) continue;
        opt.set_moments(i, m->second.values(), v->second.values());
    }
    opt.set_steps_taken(std::int64_t(ckpt.step));
}

}  // namespace ldrc
