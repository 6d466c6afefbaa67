#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "loopscope/model.hpp"

namespace loopscope {

// Small deterministic fixture model: 2 layers, 4 heads, d_model 64, byte
// vocabulary (256). Same seed, same weights, bit for bit.
std::pair<ModelConfig, WeightStore> build_toy_model(std::uint64_t seed);

// Variant with a custom vocabulary size (the byte tokenizer only covers ids
// < 256; larger vocabularies are for distribution-shape tests).
std::pair<ModelConfig, WeightStore> build_toy_model(std::uint64_t seed, int vocab_size);

// Writes model.safetensors + config.json into dir (created if needed).
void write_toy_model(std::uint64_t seed, const std::string& dir);

}  // namespace loopscope
