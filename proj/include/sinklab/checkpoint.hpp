#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sinklab/model.hpp"

namespace sinklab {

// Self-describing container: JSON header (config, tensor directory, adapter
// directory, seed, experiment snapshot) followed by raw row-major 64-bit data.
// Write/read round-trips are bit-exact.
struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    std::vector<LoraAdapter> adapters;
    uint64_t seed = 0;
    std::string experiment_json;  // optional experiment config snapshot
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json_string(const ModelConfig& cfg);
ModelConfig model_config_from_json_string(const std::string& s);

}  // namespace sinklab
