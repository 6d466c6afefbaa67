#include "loopscope/rouge.hpp"

#include <stdexcept>
#include <vector>

namespace loopscope {

double rouge_l(std::span<const TokenId> reference, std::span<const TokenId> candidate) {
    if (reference.empty() || candidate.empty()) {
        throw std::invalid_argument("rouge_l requires nonempty sequences");
    }
    const std::size_t n = reference.size();
    const std::size_t m = candidate.size();

    // two-row LCS table
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            if (reference[i - 1] == candidate[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    const int lcs = prev[m];
    if (lcs == 0) return 0.0;

    const double recall = static_cast<double>(lcs) / static_cast<double>(n);
    const double precision = static_cast<double>(lcs) / static_cast<double>(m);
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace loopscope
