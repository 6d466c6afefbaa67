#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loopscope/model.hpp"
#include "loopscope/rng.hpp"

namespace loopscope {

struct SamplingConfig {
    double p = 1.0;  // nucleus threshold in [0, 1]
    std::uint64_t seed = 0;
    int max_new = 300;
    int samples_per_prompt = 1;

    void validate() const;
};

struct NucleusEntry {
    TokenId token;
    double probability;  // renormalized within the nucleus
};

// Tokens sorted by descending probability (ties by ascending id), cut to the
// minimal prefix whose cumulative mass reaches p, then renormalized. The top
// token is always included, so p = 0 reduces to greedy selection.
std::vector<NucleusEntry> top_p_nucleus(std::span<const double> probabilities, double p);

// Inverse-CDF draw with u in [0, 1).
TokenId sample_nucleus(std::span<const NucleusEntry> nucleus, double u);

TokenId top_p_next(const Eigen::VectorXf& logits, double p, Rng& rng);

// Nucleus sampling with the model's incremental decoder. Deterministic for a
// fixed (weights, prompt, config): the generator is seeded from config.seed.
Generation top_p_sample(const Model& model, const TokenSequence& prompt, const SamplingConfig& config);

}  // namespace loopscope
