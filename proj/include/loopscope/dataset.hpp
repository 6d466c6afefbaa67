#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loopscope/cycle.hpp"
#include "loopscope/model.hpp"
#include "loopscope/tokenizer.hpp"

namespace loopscope {

enum class Condition { kNatural, kIcl };
const char* condition_name(Condition c);
Condition condition_from_name(const std::string& name);

// A matched pair of prompts that greedily continue with the same cycle:
// the natural prompt is a truncated corpus sentence (extended with model
// output when the cycle starts late, so the stored prompt cycles from
// position 0), the ICL prompt is the cycle unit presented twice.
struct PromptPair {
    std::string id;
    std::string model_id;
    std::string source_text;
    std::string natural_text;
    std::vector<TokenId> natural_ids;
    std::string icl_text;
    std::vector<TokenId> icl_ids;
    CycleAnnotation cycle;  // from the natural greedy run; start is the
                            // position in the original continuation

    std::span<const TokenId> prompt_ids(Condition c) const {
        return c == Condition::kNatural ? std::span<const TokenId>(natural_ids)
                                        : std::span<const TokenId>(icl_ids);
    }

    bool operator==(const PromptPair&) const = default;
};

struct BuildOptions {
    int max_new = 300;
    int min_cycle_len = 2;
    int min_reps = 2;
    std::size_t max_lines = 0;  // 0 = all
    unsigned threads = 0;       // 0 = hardware default
};

struct BuildReport {
    std::size_t lines_read = 0;
    std::size_t skipped_empty = 0;
    std::size_t no_cycle = 0;
    std::size_t context_overflow = 0;
    std::size_t icl_diverged = 0;
    std::size_t extended_prompts = 0;
    std::size_t kept = 0;

    double natural_retention() const {
        const std::size_t usable = lines_read - skipped_empty;
        return usable == 0 ? 0.0 : static_cast<double>(kept + icl_diverged) / static_cast<double>(usable);
    }
    std::string to_json_text(const std::string& model_id, const BuildOptions& opts) const;
};

struct BuildResult {
    std::vector<PromptPair> pairs;
    BuildReport report;
};

// Natural selection + ICL construction + pairing verification over the
// corpus lines, in input order.
BuildResult build_dataset(const Model& model, const Vocab& vocab, std::span<const std::string> lines,
                          const BuildOptions& opts);

std::vector<std::string> read_corpus_lines(const std::string& path, std::size_t max_lines);

// JSON-lines persistence, one pair per line, schema_version checked on load.
void save_dataset(std::span<const PromptPair> pairs, const std::string& path);
std::vector<PromptPair> load_dataset(const std::string& path);

// Re-checks the pairing invariant against a model: the first 2n greedy
// tokens after either prompt equal the cycle unit twice, and the pair was
// built for this model. Returns an error description, or nullopt when ok.
std::optional<std::string> verify_pair(const Model& model, const PromptPair& pair);

struct VerifyReport {
    std::size_t total = 0;
    std::size_t ok = 0;
    std::vector<std::pair<std::string, std::string>> failures;  // pair id -> reason
};

VerifyReport verify_dataset(const Model& model, std::span<const PromptPair> pairs, unsigned threads);

}  // namespace loopscope
