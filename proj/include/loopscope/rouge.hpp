#pragma once

#include <span>

#include "loopscope/common.hpp"

namespace loopscope {

// ROUGE-L F1 over token ids: longest common subsequence L, recall L/|ref|,
// precision L/|cand|, score 2PR/(P+R) (beta = 1), 0 when the LCS is empty.
double rouge_l(std::span<const TokenId> reference, std::span<const TokenId> candidate);

}  // namespace loopscope
