#pragma once

// Reference implementations used only to check the real ones. Kept naive on
// purpose; none of these share code with the library paths they verify.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "loopscope/common.hpp"

namespace loopscope::oracles {

struct BruteCycle {
    int start;
    int length;
    int reps;
};

// O(L^3): try every length (smallest first), then every start (earliest
// first), and check the periodicity token by token through the end.
inline std::optional<BruteCycle> brute_force_cycle(std::span<const TokenId> tokens, int min_cycle_len,
                                                   int min_reps) {
    const int len = static_cast<int>(tokens.size());
    for (int n = min_cycle_len; n * min_reps <= len; ++n) {
        for (int start = 0; start + n * min_reps <= len; ++start) {
            bool ok = true;
            for (int t = start; t + n < len && ok; ++t) {
                ok = tokens[static_cast<std::size_t>(t)] == tokens[static_cast<std::size_t>(t + n)];
            }
            if (ok && (len - start) / n >= min_reps) return BruteCycle{start, n, (len - start) / n};
        }
    }
    return std::nullopt;
}

// Sort-based percentile with linear interpolation between closest ranks,
// written independently of the library version.
inline double sorted_percentile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    if (xs.size() == 1) return xs[0];
    const double pos = q / 100.0 * static_cast<double>(xs.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= xs.size()) return xs.back();
    return xs[i] * (1.0 - (pos - static_cast<double>(i))) + xs[i + 1] * (pos - static_cast<double>(i));
}

}  // namespace loopscope::oracles
