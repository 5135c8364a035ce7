#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "skipfuse/net.hpp"
#include "skipfuse/train.hpp"

namespace skipfuse {

/// Where a training run stands; enough to resume it bit-exactly.
struct TrainerState {
    std::string mode = "init";  // init | baseline | inject | distill | finetune
    std::int64_t step = 0;
    std::int64_t total_steps = 0;
    std::int64_t skipped = 0;  // batches without visible points
};

struct Checkpoint {
    net::ToyNet net;
    net::OptimizerState optimizer;
    TrainerState trainer;
    std::string config_echo;  // RunConfig::dump() of the run that wrote it
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: "SKFCKPT\0", u32 version, u64 header length, a JSON
/// header (network config, array directory, RNG and trainer state, config
/// echo), then float64 little-endian arrays in directory order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace skipfuse
