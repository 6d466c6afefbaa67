#include "loopscope/prob_entropy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "loopscope/distribution.hpp"

namespace loopscope {

std::pair<double, double> token_metrics(const Model& model, std::span<const TokenId> context,
                                        TokenId target) {
    if (target < 0 || target >= model.config().vocab_size) {
        throw std::invalid_argument("target token out of vocabulary");
    }
    const ForwardTrace trace = model.forward(context);
    const Eigen::VectorXf& logits = trace.logits.back();
    return {softmax_probability(logits, target), entropy_from_logits(logits)};
}

CycleMetricSeries per_cycle_series(const Model& model, const PromptPair& pair, Condition condition,
                                   int k_cycles) {
    if (k_cycles < 1) throw std::invalid_argument("k_cycles must be >= 1");
    const auto prompt = pair.prompt_ids(condition);
    const int prompt_len = static_cast<int>(prompt.size());
    const int n = pair.cycle.length;

    // complete cycles that fit the context window
    const int room = model.config().max_context - prompt_len;
    const int k = std::min(k_cycles, room / n);
    if (k < 1) throw std::invalid_argument("pair " + pair.id + " leaves no room for a full cycle");

    const Generation gen =
        model.generate_greedy(TokenSequence{std::vector<TokenId>(prompt.begin(), prompt.end()),
                                            pair.model_id},
                              k * n);
    const std::vector<TokenId> seq = concat(prompt, gen.tokens.ids);
    const std::vector<StepScore> scores = model.score_sequence(seq);

    CycleMetricSeries series;
    series.condition = condition;
    series.pair_id = pair.id;
    series.mean_prob.assign(static_cast<std::size_t>(k) + 1, 0.0);
    series.mean_entropy.assign(static_cast<std::size_t>(k) + 1, 0.0);
    series.token_count.assign(static_cast<std::size_t>(k) + 1, 0);

    // scores[t] is the prediction of seq[t+1]; target position q maps to
    // scores[q-1].
    auto add_range = [&](std::size_t cycle, int first_target, int last_target) {
        double p = 0.0, h = 0.0;
        int count = 0;
        for (int q = first_target; q <= last_target; ++q) {
            p += scores[static_cast<std::size_t>(q - 1)].probability;
            h += scores[static_cast<std::size_t>(q - 1)].entropy;
            ++count;
        }
        series.mean_prob[cycle] = count ? p / count : 0.0;
        series.mean_entropy[cycle] = count ? h / count : 0.0;
        series.token_count[cycle] = count;
    };

    // cycle 0: prompt tokens (natural) or the first unit occurrence (icl),
    // excluding the first token of the sequence, which has no prediction
    if (condition == Condition::kNatural) {
        add_range(0, 1, prompt_len - 1);
    } else {
        add_range(0, 1, n - 1);
    }
    for (int i = 1; i <= k; ++i) {
        add_range(static_cast<std::size_t>(i), prompt_len + (i - 1) * n, prompt_len + i * n - 1);
    }
    return series;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    if (q < 0.0 || q > 100.0) throw std::invalid_argument("percentile q must be in [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (values[lo + 1] - values[lo]) * frac;
}

AggregateSeries aggregate(std::span<const CycleMetricSeries> series) {
    if (series.empty()) throw std::invalid_argument("aggregate needs at least one series");

    AggregateSeries out;
    out.condition = series.front().condition;
    std::size_t cycles = series.front().cycles();
    for (const auto& s : series) {
        if (s.cycles() != cycles) out.ragged = true;
        cycles = std::min(cycles, s.cycles());
    }

    out.rows.resize(cycles);
    for (std::size_t c = 0; c < cycles; ++c) {
        std::vector<double> probs, ents;
        probs.reserve(series.size());
        ents.reserve(series.size());
        for (const auto& s : series) {
            probs.push_back(s.mean_prob[c]);
            ents.push_back(s.mean_entropy[c]);
        }
        AggregateRow& row = out.rows[c];
        row.cycle = static_cast<int>(c);
        row.count = series.size();
        double sp = 0.0, se = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            sp += probs[i];
            se += ents[i];
        }
        row.mean_prob = sp / static_cast<double>(probs.size());
        row.mean_entropy = se / static_cast<double>(ents.size());
        row.p5_prob = percentile(probs, 5.0);
        row.p95_prob = percentile(probs, 95.0);
        row.p5_entropy = percentile(ents, 5.0);
        row.p95_entropy = percentile(ents, 95.0);
    }
    return out;
}

}  // namespace loopscope
