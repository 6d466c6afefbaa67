#include "loopscope/dataset.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "loopscope/thread_pool.hpp"

namespace loopscope {

namespace {

using json = nlohmann::json;
constexpr int kSchemaVersion = 1;

std::string dump_safe(const json& j) {
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

struct LineOutcome {
    std::optional<PromptPair> pair;
    bool empty_line = false;
    bool no_cycle = false;
    bool context_overflow = false;
    bool icl_diverged = false;
    bool extended = false;
};

LineOutcome process_line(const Model& model, const Vocab& vocab, const std::string& raw_line,
                         const BuildOptions& opts) {
    LineOutcome out;

    std::string line = raw_line;
    const std::size_t first = line.find_first_not_of(" \t\r\n");
    line = first == std::string::npos ? std::string() : line.substr(first);
    if (line.empty()) {
        out.empty_line = true;
        return out;
    }

    const std::string prompt_text = truncate_scalars(line, 50);
    TokenSequence prompt = vocab.encode(prompt_text);
    if (prompt.ids.size() < 2) {
        out.empty_line = true;
        return out;
    }
    if (static_cast<int>(prompt.ids.size()) + opts.max_new > model.config().max_context) {
        out.context_overflow = true;
        return out;
    }

    const Generation gen = model.generate_greedy(prompt, opts.max_new);
    const auto cycle = detect_cycle(gen.tokens.ids, opts.min_cycle_len, opts.min_reps);
    if (!cycle) {
        out.no_cycle = true;
        return out;
    }

    PromptPair pair;
    pair.model_id = model.config().model_id;
    pair.source_text = line;
    pair.cycle = *cycle;

    // Extend the prompt with the generated tokens that precede the cycle, so
    // generation from the stored prompt starts the cycle at position 0.
    pair.natural_ids = prompt.ids;
    if (cycle->start > 0) {
        pair.natural_ids.insert(pair.natural_ids.end(), gen.tokens.ids.begin(),
                                gen.tokens.ids.begin() + cycle->start);
        out.extended = true;
    }
    pair.natural_text = vocab.decode(pair.natural_ids);

    pair.icl_ids = concat(cycle->unit, cycle->unit);
    pair.icl_text = vocab.decode(pair.icl_ids);

    // Both prompts must have room to regenerate the unit twice.
    const int need = 2 * cycle->length;
    if (static_cast<int>(pair.natural_ids.size()) + need > model.config().max_context ||
        static_cast<int>(pair.icl_ids.size()) + need > model.config().max_context) {
        out.context_overflow = true;
        return out;
    }

    // Pairing invariant, checked at build time for both conditions.
    const std::vector<TokenId> expected = concat(cycle->unit, cycle->unit);
    const Generation nat_check =
        model.generate_greedy(TokenSequence{pair.natural_ids, pair.model_id}, need);
    if (nat_check.tokens.ids != expected) {
        out.no_cycle = true;
        return out;
    }
    const Generation icl_check = model.generate_greedy(TokenSequence{pair.icl_ids, pair.model_id}, need);
    if (icl_check.tokens.ids != expected) {
        out.icl_diverged = true;
        return out;
    }

    out.pair = std::move(pair);
    return out;
}

}  // namespace

const char* condition_name(Condition c) {
    return c == Condition::kNatural ? "natural" : "icl";
}

Condition condition_from_name(const std::string& name) {
    if (name == "natural") return Condition::kNatural;
    if (name == "icl") return Condition::kIcl;
    throw std::invalid_argument("unknown condition: " + name);
}

std::string BuildReport::to_json_text(const std::string& model_id, const BuildOptions& opts) const {
    json j{
        {"model_id", model_id},
        {"lines_read", lines_read},
        {"skipped_empty", skipped_empty},
        {"no_cycle", no_cycle},
        {"context_overflow", context_overflow},
        {"icl_diverged", icl_diverged},
        {"extended_prompts", extended_prompts},
        {"kept", kept},
        {"natural_retention", natural_retention()},
        {"settings",
         {{"max_new", opts.max_new}, {"min_cycle_len", opts.min_cycle_len}, {"min_reps", opts.min_reps}}},
    };
    return j.dump(2) + "\n";
}

BuildResult build_dataset(const Model& model, const Vocab& vocab, std::span<const std::string> lines,
                          const BuildOptions& opts) {
    std::size_t n = lines.size();
    if (opts.max_lines > 0) n = std::min(n, opts.max_lines);

    std::vector<LineOutcome> outcomes(n);
    parallel_for(n, opts.threads,
                 [&](std::size_t i) { outcomes[i] = process_line(model, vocab, lines[i], opts); });

    BuildResult result;
    result.report.lines_read = n;
    for (std::size_t i = 0; i < n; ++i) {
        LineOutcome& o = outcomes[i];
        result.report.skipped_empty += o.empty_line;
        result.report.no_cycle += o.no_cycle;
        result.report.context_overflow += o.context_overflow;
        result.report.icl_diverged += o.icl_diverged;
        result.report.extended_prompts += o.extended;
        if (o.pair) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "p%05zu", i);
            o.pair->id = buf;
            result.pairs.push_back(std::move(*o.pair));
        }
    }
    result.report.kept = result.pairs.size();
    return result;
}

std::vector<std::string> read_corpus_lines(const std::string& path, std::size_t max_lines) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(file, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
        if (max_lines > 0 && lines.size() >= max_lines) break;
    }
    return lines;
}

void save_dataset(std::span<const PromptPair> pairs, const std::string& path) {
    std::ofstream file(path, std::ios::trunc | std::ios::binary);
    if (!file) throw std::runtime_error("cannot write dataset file: " + path);
    for (const PromptPair& p : pairs) {
        json j{
            {"schema_version", kSchemaVersion},
            {"id", p.id},
            {"model_id", p.model_id},
            {"source_text", p.source_text},
            {"natural_text", p.natural_text},
            {"natural_ids", p.natural_ids},
            {"icl_text", p.icl_text},
            {"icl_ids", p.icl_ids},
            {"cycle_start", p.cycle.start},
            {"cycle_length", p.cycle.length},
            {"cycle_reps", p.cycle.reps},
            {"cycle_ids", p.cycle.unit},
        };
        file << dump_safe(j) << '\n';
    }
    if (!file) throw std::runtime_error("write failed for dataset file: " + path);
}

std::vector<PromptPair> load_dataset(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open dataset file: " + path);
    std::vector<PromptPair> pairs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("dataset " + path + " line " + std::to_string(line_no) +
                                     ": parse error: " + e.what());
        }
        const int version = j.value("schema_version", -1);
        if (version != kSchemaVersion) {
            throw std::runtime_error("dataset " + path + " line " + std::to_string(line_no) +
                                     ": schema version " + std::to_string(version) +
                                     " not supported (expected " + std::to_string(kSchemaVersion) + ")");
        }
        try {
            PromptPair p;
            p.id = j.at("id").get<std::string>();
            p.model_id = j.at("model_id").get<std::string>();
            p.source_text = j.at("source_text").get<std::string>();
            p.natural_text = j.at("natural_text").get<std::string>();
            p.natural_ids = j.at("natural_ids").get<std::vector<TokenId>>();
            p.icl_text = j.at("icl_text").get<std::string>();
            p.icl_ids = j.at("icl_ids").get<std::vector<TokenId>>();
            p.cycle.start = j.at("cycle_start").get<int>();
            p.cycle.length = j.at("cycle_length").get<int>();
            p.cycle.reps = j.at("cycle_reps").get<int>();
            p.cycle.unit = j.at("cycle_ids").get<std::vector<TokenId>>();
            pairs.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw std::runtime_error("dataset " + path + " line " + std::to_string(line_no) +
                                     ": bad record: " + e.what());
        }
    }
    return pairs;
}

std::optional<std::string> verify_pair(const Model& model, const PromptPair& pair) {
    if (pair.model_id != model.config().model_id) {
        return "pair was built for model '" + pair.model_id + "', not '" + model.config().model_id + "'";
    }
    if (pair.cycle.length < 2 || pair.cycle.unit.size() != static_cast<std::size_t>(pair.cycle.length)) {
        return "malformed cycle annotation";
    }
    const std::vector<TokenId> expected = concat(pair.cycle.unit, pair.cycle.unit);
    if (pair.icl_ids != expected) return "icl prompt is not the cycle unit twice";

    const int need = 2 * pair.cycle.length;
    const Generation nat = model.generate_greedy(TokenSequence{pair.natural_ids, pair.model_id}, need);
    if (nat.tokens.ids != expected) return "natural prompt no longer regenerates the cycle";
    const Generation icl = model.generate_greedy(TokenSequence{pair.icl_ids, pair.model_id}, need);
    if (icl.tokens.ids != expected) return "icl prompt no longer regenerates the cycle";
    return std::nullopt;
}

VerifyReport verify_dataset(const Model& model, std::span<const PromptPair> pairs, unsigned threads) {
    std::vector<std::optional<std::string>> errors(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) { errors[i] = verify_pair(model, pairs[i]); });

    VerifyReport report;
    report.total = pairs.size();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (errors[i]) {
            report.failures.emplace_back(pairs[i].id, *errors[i]);
        } else {
            ++report.ok;
        }
    }
    return report;
}

}  // namespace loopscope
