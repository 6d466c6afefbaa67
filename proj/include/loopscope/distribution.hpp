#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <vector>

#include "loopscope/common.hpp"

namespace loopscope {

// Distribution helpers shared by generation, scoring and lens code. Logits
// stay in single precision (model arithmetic), sums and entropies accumulate
// in double.

// Argmax with ties broken by lowest index.
inline TokenId argmax(const Eigen::VectorXf& logits) {
    TokenId best = 0;
    float best_v = logits[0];
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits[i] > best_v) {
            best_v = logits[i];
            best = static_cast<TokenId>(i);
        }
    }
    return best;
}

// Highest-probability token that is not `excluded`.
inline TokenId argmax_excluding(const Eigen::VectorXf& logits, TokenId excluded) {
    TokenId best = excluded == 0 ? 1 : 0;
    float best_v = logits[best];
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (static_cast<TokenId>(i) == excluded) continue;
        if (logits[i] > best_v) {
            best_v = logits[i];
            best = static_cast<TokenId>(i);
        }
    }
    return best;
}

inline std::vector<double> softmax(const Eigen::VectorXf& logits) {
    const float m = logits.maxCoeff();
    std::vector<double> p(static_cast<std::size_t>(logits.size()));
    double z = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double e = std::exp(static_cast<double>(logits[i]) - static_cast<double>(m));
        p[static_cast<std::size_t>(i)] = e;
        z += e;
    }
    for (auto& v : p) v /= z;
    return p;
}

// Entropy of softmax(logits) in nats, computed from the logits directly:
// H = ln Z - S/Z with Z = sum e^x, S = sum x e^x, x = logit - max.
inline double entropy_from_logits(const Eigen::VectorXf& logits) {
    const float m = logits.maxCoeff();
    double z = 0.0;
    double s = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double x = static_cast<double>(logits[i]) - static_cast<double>(m);
        const double e = std::exp(x);
        z += e;
        s += x * e;
    }
    return std::log(z) - s / z;
}

// Probability of one token under softmax(logits).
inline double softmax_probability(const Eigen::VectorXf& logits, TokenId token) {
    const float m = logits.maxCoeff();
    double z = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        z += std::exp(static_cast<double>(logits[i]) - static_cast<double>(m));
    }
    return std::exp(static_cast<double>(logits[token]) - static_cast<double>(m)) / z;
}

}  // namespace loopscope
