#include "loopscope/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "loopscope/distribution.hpp"

namespace loopscope {

void SamplingConfig::validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("sampling p must be in [0, 1]");
    if (max_new < 1) throw std::invalid_argument("max_new must be >= 1");
    if (samples_per_prompt < 1) throw std::invalid_argument("samples_per_prompt must be >= 1");
}

std::vector<NucleusEntry> top_p_nucleus(std::span<const double> probabilities, double p) {
    if (probabilities.empty()) throw std::invalid_argument("empty distribution");
    std::vector<TokenId> order(probabilities.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
        const double pa = probabilities[static_cast<std::size_t>(a)];
        const double pb = probabilities[static_cast<std::size_t>(b)];
        if (pa != pb) return pa > pb;
        return a < b;  // deterministic tie order
    });

    std::size_t cut = order.size();
    if (p < 1.0) {
        double cum = 0.0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            cum += probabilities[static_cast<std::size_t>(order[i])];
            if (cum >= p) {
                cut = i + 1;
                break;
            }
        }
    }

    double total = 0.0;
    for (std::size_t i = 0; i < cut; ++i) total += probabilities[static_cast<std::size_t>(order[i])];
    std::vector<NucleusEntry> nucleus(cut);
    for (std::size_t i = 0; i < cut; ++i) {
        nucleus[i] = {order[i], probabilities[static_cast<std::size_t>(order[i])] / total};
    }
    return nucleus;
}

TokenId sample_nucleus(std::span<const NucleusEntry> nucleus, double u) {
    if (nucleus.empty()) throw std::invalid_argument("empty nucleus");
    double cum = 0.0;
    for (const NucleusEntry& e : nucleus) {
        cum += e.probability;
        if (u < cum) return e.token;
    }
    return nucleus.back().token;
}

TokenId top_p_next(const Eigen::VectorXf& logits, double p, Rng& rng) {
    if (p <= 0.0) return argmax(logits);  // nucleus is the single top token
    const std::vector<double> probs = softmax(logits);
    const auto nucleus = top_p_nucleus(probs, p);
    return sample_nucleus(nucleus, rng.uniform01());
}

Generation top_p_sample(const Model& model, const TokenSequence& prompt, const SamplingConfig& config) {
    config.validate();
    auto [window, truncated] = model.fit_prompt(prompt.ids, config.max_new);
    model.check_tokens(window);
    const int room = model.config().max_context - static_cast<int>(window.size());
    const int steps = std::min(config.max_new, room);

    Rng rng(config.seed);
    DecodeSession session(model);
    const Eigen::VectorXf* logits = &session.prefill(window);

    Generation gen;
    gen.prompt_truncated = truncated;
    gen.tokens.model_id = model.config().model_id;
    gen.tokens.ids.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const TokenId next = top_p_next(*logits, config.p, rng);
        gen.tokens.ids.push_back(next);
        if (i + 1 < steps) logits = &session.step(next);
    }
    return gen;
}

}  // namespace loopscope
