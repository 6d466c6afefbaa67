#pragma once

#include <span>
#include <vector>

#include "loopscope/dataset.hpp"
#include "loopscope/model.hpp"

namespace loopscope {

// Per-cycle teacher-forcing metrics for one pair. Index 0 is the input:
// the prompt tokens for the natural condition, the first occurrence of the
// unit for ICL (minus the very first token, which has no prediction).
// Index i >= 1 averages over the n tokens of the i-th generated repetition.
struct CycleMetricSeries {
    Condition condition = Condition::kNatural;
    std::string pair_id;
    std::vector<double> mean_prob;
    std::vector<double> mean_entropy;
    std::vector<int> token_count;

    std::size_t cycles() const { return mean_prob.size(); }
};

// probability of `target` under the next-token distribution after `context`,
// and entropy of that distribution in nats.
std::pair<double, double> token_metrics(const Model& model, std::span<const TokenId> context,
                                        TokenId target);

// Greedy-generates k_cycles * n tokens from the pair's prompt (fewer when the
// context window cuts in) and scores every position by teacher forcing.
CycleMetricSeries per_cycle_series(const Model& model, const PromptPair& pair, Condition condition,
                                   int k_cycles = 10);

// Interpolated percentile (linear between closest ranks), q in [0, 100].
double percentile(std::vector<double> values, double q);

struct AggregateRow {
    int cycle = 0;
    double mean_prob = 0.0, p5_prob = 0.0, p95_prob = 0.0;
    double mean_entropy = 0.0, p5_entropy = 0.0, p95_entropy = 0.0;
    std::size_t count = 0;
};

struct AggregateSeries {
    Condition condition = Condition::kNatural;
    std::vector<AggregateRow> rows;
    bool ragged = false;  // inputs disagreed on cycle count; aligned on the shortest
};

// Mean and 5th/95th percentile band per cycle index over a set of series
// (one condition). Ragged inputs are aligned on the shortest common cycle
// count and flagged.
AggregateSeries aggregate(std::span<const CycleMetricSeries> series);

}  // namespace loopscope
