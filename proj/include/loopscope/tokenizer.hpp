#pragma once

#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "loopscope/common.hpp"

namespace loopscope {

enum class TokenizerMode { kByte, kBpe };

// Text <-> token ids. Two modes:
//   byte  - id == byte value, exact round trip on any byte string.
//   bpe   - GPT-2 scheme: byte-level alphabet, pretokenizer split, then
//           greedy lowest-rank pair merging from a vocab.json + merges.txt
//           pair as published with GPT-2-family checkpoints.
//
// The pretokenizer's Unicode letter/number/space classes cover ASCII exactly
// and the common letter blocks (Latin incl. supplements, Greek, Cyrillic,
// Hebrew, Arabic, CJK, kana, Hangul) beyond that; rare scripts may split
// differently than the reference tokenizer.
class Vocab {
public:
    static Vocab byte_fallback();
    static Vocab load_bpe(const std::string& vocab_json_path, const std::string& merges_path);

    TokenSequence encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> tokens) const;

    TokenizerMode mode() const { return mode_; }
    int size() const { return size_; }

private:
    Vocab() = default;

    std::vector<TokenId> bpe_chunk(std::string_view chunk_bytes) const;

    TokenizerMode mode_ = TokenizerMode::kByte;
    int size_ = 256;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;
    // merge rank by "left\x01right"
    std::unordered_map<std::string, int> merge_rank_;
};

// First n Unicode scalar values of text as a byte prefix; never splits a
// multi-byte character. Invalid bytes count as one scalar each.
std::string truncate_scalars(std::string_view text, std::size_t n);

// GPT-2 pretokenizer split (contractions, " ?letters", " ?numbers",
// " ?other", whitespace handling). Exposed for tests.
std::vector<std::string> pretokenize_gpt2(std::string_view text);

}  // namespace loopscope
