#pragma once

#include <cstdint>
#include <string>

#include "vitssp/nn.hpp"

namespace vitssp {

// Stage tag stored in the header so tools can refuse mismatched files.
enum class CheckpointStage : uint8_t { Pretrain = 0, Finetune = 1 };

// Snapshot of a model plus everything needed to resume or audit a run:
// RNG cursor, the config text that produced it, and free-form metadata.
// Tensor payloads are written at their native scalar width, so a saved
// double-precision model reloads bit for bit.
struct Checkpoint {
    CheckpointStage stage = CheckpointStage::Pretrain;
    DType dt = DType::F64;
    uint64_t rng_key = 0;
    uint64_t rng_counter = 0;
    std::string config_echo;  // INI text of the run configuration
    std::string meta;         // JSON blob (epochs run, losses, ...)
    NamedTensors tensors;
};

// Binary layout (little-endian): magic "VSPC", u16 version(=1), u8 stage,
// u8 dtype, u64 rng key, u64 rng counter, two length-prefixed strings
// (config, meta), u32 tensor count, then per tensor a length-prefixed name,
// u8 ndim, u32 dims, and the raw scalars. A crc32 of all preceding bytes
// closes the file.
void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Throws DataError on bad magic, unsupported version, truncation, or crc
// mismatch.
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into `dst` by name. Every destination entry must
// be present with identical shape and dtype; extra checkpoint tensors are an
// error too, so silently stale files cannot half-load.
void load_into(NamedTensors& dst, const Checkpoint& ck);

}  // namespace vitssp
