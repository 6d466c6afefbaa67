#include "loopscope/perturb.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "loopscope/cycle.hpp"
#include "loopscope/rouge.hpp"
#include "loopscope/rng.hpp"
#include "loopscope/thread_pool.hpp"

namespace loopscope {

namespace {

std::uint64_t cell_seed(std::uint64_t root, const std::string& pair_id, Condition condition, int cycles,
                        double p, int sample) {
    const std::string tag = "perturb|" + pair_id + "|" + condition_name(condition) + "|" +
                            std::to_string(cycles) + "|" + std::to_string(std::lround(p * 1000.0)) + "|" +
                            std::to_string(sample);
    return derive_seed(root, tag);
}

}  // namespace

SweepResult sweep(const Model& model, std::span<const PromptPair> pairs, const SweepOptions& opts) {
    if (opts.p_grid.empty() || opts.cycle_grid.empty()) {
        throw std::invalid_argument("sweep needs nonempty p and cycle grids");
    }
    for (const double p : opts.p_grid) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p grid values must be in [0, 1]");
    }

    struct Cell {
        std::size_t pair;
        Condition condition;
        int cycles;
        double p;
        int sample;
    };
    std::vector<Cell> cells;
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        for (const Condition cond : {Condition::kNatural, Condition::kIcl}) {
            for (const int c : opts.cycle_grid) {
                for (const double p : opts.p_grid) {
                    for (int s = 0; s < opts.samples_per_prompt; ++s) {
                        cells.push_back({pi, cond, c, p, s});
                    }
                }
            }
        }
    }

    std::vector<std::optional<PerturbationRecord>> slots(cells.size());
    std::vector<char> overflow(cells.size(), 0);

    parallel_for(cells.size(), opts.threads, [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        const PromptPair& pair = pairs[cell.pair];
        const auto base = pair.prompt_ids(cell.condition);
        const int n = pair.cycle.length;

        std::vector<TokenId> prompt(base.begin(), base.end());
        for (int c = 0; c < cell.cycles; ++c) {
            prompt.insert(prompt.end(), pair.cycle.unit.begin(), pair.cycle.unit.end());
        }
        if (static_cast<int>(prompt.size()) + opts.max_new > model.config().max_context) {
            overflow[ci] = 1;
            return;
        }

        SamplingConfig sc;
        sc.p = cell.p;
        sc.max_new = opts.max_new;
        sc.seed = cell_seed(opts.seed, pair.id, cell.condition, cell.cycles, cell.p, cell.sample);
        const Generation gen = top_p_sample(model, TokenSequence{std::move(prompt), pair.model_id}, sc);
        const std::vector<TokenId>& out = gen.tokens.ids;

        PerturbationRecord rec;
        rec.pair_id = pair.id;
        rec.condition = cell.condition;
        rec.cycles_in_prompt = cell.cycles;
        rec.p = cell.p;
        rec.repetitive = detect_single_repeat(out, opts.min_cycle_len).has_value();

        const auto persistent = detect_cycle(out, opts.min_cycle_len, 2);
        if (persistent) {
            rec.rouge = rouge_l(pair.cycle.unit, persistent->unit);
        } else {
            const std::size_t window = std::min(out.size(), static_cast<std::size_t>(2 * n));
            rec.rouge = rouge_l(pair.cycle.unit, std::span<const TokenId>(out.data(), window));
        }
        if (opts.keep_generated) rec.generated = out;
        slots[ci] = std::move(rec);
    });

    SweepResult result;
    result.records.reserve(cells.size());
    // condition -> cycles -> p, in grid order
    std::map<std::tuple<int, int, std::size_t>, std::pair<double, std::pair<double, std::size_t>>> agg;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        result.skipped_overflow += overflow[ci];
        if (!slots[ci]) continue;
        const PerturbationRecord& rec = *slots[ci];
        std::size_t p_index = 0;
        while (opts.p_grid[p_index] != rec.p) ++p_index;
        auto& entry = agg[{rec.condition == Condition::kIcl, rec.cycles_in_prompt, p_index}];
        entry.first += rec.repetitive ? 1.0 : 0.0;
        entry.second.first += rec.rouge;
        ++entry.second.second;
        result.records.push_back(std::move(*slots[ci]));
    }

    for (const auto& [key, value] : agg) {
        SweepCell cell;
        cell.condition = std::get<0>(key) ? Condition::kIcl : Condition::kNatural;
        cell.cycles_in_prompt = std::get<1>(key);
        cell.p = opts.p_grid[std::get<2>(key)];
        cell.count = value.second.second;
        cell.proportion_repetitive = value.first / static_cast<double>(cell.count);
        cell.mean_rouge = value.second.first / static_cast<double>(cell.count);
        result.aggregates.push_back(cell);
    }
    return result;
}

}  // namespace loopscope
