#include "loopscope/cycle.hpp"

#include <algorithm>
#include <stdexcept>

namespace loopscope {

namespace {

// Z-array: z[i] = length of the longest common prefix of s and s[i:].
std::vector<int> z_array(std::span<const TokenId> s) {
    const int n = static_cast<int>(s.size());
    std::vector<int> z(static_cast<std::size_t>(n), 0);
    if (n == 0) return z;
    z[0] = n;
    int l = 0, r = 0;
    for (int i = 1; i < n; ++i) {
        int zi = 0;
        if (i < r) zi = std::min(r - i, z[static_cast<std::size_t>(i - l)]);
        while (i + zi < n && s[static_cast<std::size_t>(zi)] == s[static_cast<std::size_t>(i + zi)]) ++zi;
        z[static_cast<std::size_t>(i)] = zi;
        if (i + zi > r) {
            l = i;
            r = i + zi;
        }
    }
    return z;
}

}  // namespace

std::optional<CycleAnnotation> detect_cycle(std::span<const TokenId> tokens, int min_cycle_len,
                                            int min_reps) {
    if (min_cycle_len < 1) throw std::invalid_argument("min_cycle_len must be >= 1");
    if (min_reps < 2) throw std::invalid_argument("min_reps must be >= 2");
    const int len = static_cast<int>(tokens.size());
    if (len == 0) return std::nullopt;

    // A suffix period of the sequence is a prefix period of its reverse:
    // the longest suffix with period n has length n + z_rev[n], where z_rev
    // is the Z-array of the reversed tokens.
    std::vector<TokenId> rev(tokens.rbegin(), tokens.rend());
    const std::vector<int> z = z_array(rev);

    for (int n = min_cycle_len; n * min_reps <= len; ++n) {
        const int periodic_len = n + z[static_cast<std::size_t>(n)];
        const int reps = periodic_len / n;
        if (reps < min_reps) continue;
        CycleAnnotation a;
        a.length = n;
        a.start = len - periodic_len;
        a.reps = reps;
        a.unit.assign(tokens.begin() + a.start, tokens.begin() + a.start + n);
        return a;
    }
    return std::nullopt;
}

std::vector<TokenSpan> cycle_slices(std::span<const TokenId> tokens, const CycleAnnotation& annotation,
                                    int k) {
    if (annotation.length < 1 || annotation.start < 0 ||
        annotation.start + annotation.length > static_cast<int>(tokens.size())) {
        throw std::invalid_argument("cycle annotation does not fit the sequence");
    }
    if (k < 0 || k > annotation.reps) {
        throw std::out_of_range("requested " + std::to_string(k) + " slices, annotation has " +
                                std::to_string(annotation.reps) + " repetitions");
    }
    std::vector<TokenSpan> spans;
    spans.reserve(static_cast<std::size_t>(k));
    for (int i = 1; i <= k; ++i) {
        spans.push_back({annotation.start + (i - 1) * annotation.length,
                         annotation.start + i * annotation.length});
    }
    return spans;
}

std::optional<CycleAnnotation> detect_single_repeat(std::span<const TokenId> tokens, int min_cycle_len) {
    if (min_cycle_len < 1) throw std::invalid_argument("min_cycle_len must be >= 1");
    const int len = static_cast<int>(tokens.size());
    for (int n = min_cycle_len; 2 * n <= len; ++n) {
        // a run of n consecutive positions with tokens[i] == tokens[i+n]
        // means the unit starting there is echoed once
        int run = 0;
        int best = -1;
        for (int i = len - n - 1; i >= 0; --i) {
            run = tokens[static_cast<std::size_t>(i)] == tokens[static_cast<std::size_t>(i + n)] ? run + 1 : 0;
            if (run >= n && i + 2 * n <= len) best = i;
        }
        if (best >= 0) {
            CycleAnnotation a;
            a.length = n;
            a.start = best;
            a.reps = 2;
            a.unit.assign(tokens.begin() + best, tokens.begin() + best + n);
            return a;
        }
    }
    return std::nullopt;
}

RepetitionStats repetition_rate(std::span<const TokenSequence> generations, int min_cycle_len,
                                int min_reps) {
    if (generations.empty()) throw std::invalid_argument("repetition_rate needs at least one sequence");
    RepetitionStats stats;
    stats.total = generations.size();
    for (const TokenSequence& g : generations) {
        const auto a = detect_cycle(g.ids, min_cycle_len, min_reps);
        if (a) {
            ++stats.repetitive;
            ++stats.length_histogram[a->length];
        }
    }
    stats.rate = static_cast<double>(stats.repetitive) / static_cast<double>(stats.total);
    return stats;
}

}  // namespace loopscope
