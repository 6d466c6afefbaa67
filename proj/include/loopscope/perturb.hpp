#pragma once

#include <span>
#include <vector>

#include "loopscope/dataset.hpp"
#include "loopscope/sampling.hpp"

namespace loopscope {

// One sweep cell: a pair sampled under one (condition, extra prompt cycles,
// p) setting. `repetitive` follows the single-repetition convention (the
// unit appears, then echoes once, anywhere in the output). rouge_l compares
// the greedy cycle unit against the persistent detected cycle unit, or,
// when none persists, against the first 2n generated tokens.
struct PerturbationRecord {
    std::string pair_id;
    Condition condition = Condition::kNatural;
    int cycles_in_prompt = 0;
    double p = 0.0;
    bool repetitive = false;
    double rouge = 0.0;
    std::vector<TokenId> generated;
};

struct SweepCell {
    Condition condition = Condition::kNatural;
    int cycles_in_prompt = 0;
    double p = 0.0;
    double proportion_repetitive = 0.0;
    double mean_rouge = 0.0;
    std::size_t count = 0;
};

struct SweepOptions {
    std::vector<double> p_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<int> cycle_grid = {0, 1, 2, 3, 4, 5, 6};
    std::uint64_t seed = 0;
    int max_new = 300;
    int samples_per_prompt = 1;
    int min_cycle_len = 2;
    unsigned threads = 0;
    bool keep_generated = false;  // retain raw tokens in the records
};

struct SweepResult {
    std::vector<PerturbationRecord> records;
    std::vector<SweepCell> aggregates;  // ordered by condition, cycles, p
    std::size_t skipped_overflow = 0;
};

// Per-cell generators are seeded from hash(seed, pair, condition, cycles, p,
// sample), so results do not depend on scheduling order.
SweepResult sweep(const Model& model, std::span<const PromptPair> pairs, const SweepOptions& opts);

}  // namespace loopscope
