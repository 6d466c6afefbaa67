#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace loopscope {

inline constexpr const char* kToolName = "loopscope";
inline constexpr const char* kToolVersion = "0.1.0";

using TokenId = std::int32_t;

// Ordered token ids plus the id of the model that produced (or is meant to
// consume) them. model_id is empty for sequences with no model attached,
// e.g. raw tokenizer output.
struct TokenSequence {
    std::vector<TokenId> ids;
    std::string model_id;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

// Result of a generation run. tokens holds only the newly generated
// continuation, not the prompt. prompt_truncated is set when the prompt had
// to be cut from the left to fit the context window.
struct Generation {
    TokenSequence tokens;
    bool prompt_truncated = false;
};

inline std::vector<TokenId> concat(std::span<const TokenId> a, std::span<const TokenId> b) {
    std::vector<TokenId> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

}  // namespace loopscope
