#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "loopscope/common.hpp"

namespace loopscope {

// Periodicity certificate for a token sequence: tokens[t] == tokens[t + n]
// for every t in [T, L - n), with reps = floor((L - T) / n) complete
// repetitions of the n-token unit. n is the smallest qualifying cycle length
// and T the smallest start for that n.
struct CycleAnnotation {
    int start = 0;   // T
    int length = 0;  // n
    int reps = 0;
    std::vector<TokenId> unit;
};

// Smallest cycle length >= min_cycle_len whose periodicity holds through the
// end of the sequence with at least min_reps complete repetitions; earliest
// start for that length. nullopt when no such cycle exists.
std::optional<CycleAnnotation> detect_cycle(std::span<const TokenId> tokens, int min_cycle_len,
                                            int min_reps);

struct TokenSpan {
    int begin = 0;  // [begin, end)
    int end = 0;
};

// 1-based cycle slices: slice i covers [T + (i-1)*n, T + i*n). k must not
// exceed the annotation's repetition count.
std::vector<TokenSpan> cycle_slices(std::span<const TokenId> tokens, const CycleAnnotation& annotation,
                                    int k);

// Relaxed detection for perturbed generations: an n-token unit followed
// immediately by one echo of itself, anywhere in the sequence, is enough.
// Smallest such n, earliest start. The periodicity need not persist.
std::optional<CycleAnnotation> detect_single_repeat(std::span<const TokenId> tokens, int min_cycle_len);

struct RepetitionStats {
    double rate = 0.0;
    std::size_t total = 0;
    std::size_t repetitive = 0;
    std::map<int, std::size_t> length_histogram;  // cycle length -> count
};

RepetitionStats repetition_rate(std::span<const TokenSequence> generations, int min_cycle_len,
                                int min_reps);

}  // namespace loopscope
