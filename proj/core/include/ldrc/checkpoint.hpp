#pragma once

#include <map>
#include <string>

#include "ldrc/model.hpp"
#include "ldrc/train.hpp"

namespace ldrc {

// On-disk format (little-endian):
//   magic "LDRC", format version u32, phase u8, step u64,
//   config blob (u32 length + bytes, the flat key=value ModelConfig),
//   u32 parameter count, parameter records,
//   u32 moment count, moment records.
// Record: name length u32, name bytes, rank u8, dims u64 x rank, raw f32
// data. Moment records are named "<param>/m" and "<param>/v". Records are
// sorted by name, so save -> load -> save is byte-identical.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    Phase phase = Phase::Constraint;
    std::uint64_t step = 0;
    ModelConfig config;
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> moments;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

// Detached copies of all model parameters plus the optimizer moments of the
// trained subset.
Checkpoint snapshot(const Model& model, const Adam* opt, Phase phase, std::uint64_t step);

// Copies checkpoint values into a model built from the same config. A
// Derain-phase checkpoint re-applies the freeze mask to encoder parameters.
void restore_model(Model& model, const Checkpoint& ckpt);

// Restores moments for parameters the optimizer tracks; parameters without
// stored moments keep fresh zeros. Sets the optimizer step counter.
void restore_optimizer(Adam& opt, const Checkpoint& ckpt);

}  // namespace ldrc
