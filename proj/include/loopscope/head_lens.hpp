#pragma once

#include <span>
#include <string>
#include <vector>

#include "loopscope/dataset.hpp"
#include "loopscope/model.hpp"

namespace loopscope {

// Affine translator for one attention head: maps the head's residual update
// into the pre-unembedding space. Pseudo-logits are
// unembed(final_norm(W * A + b)).
struct HeadLens {
    int layer = 0;
    int head = 0;
    Eigen::MatrixXf w;  // d_model x d_model, identity at init
    Eigen::VectorXf b;  // d_model, zero at init
    int steps = 0;
    double final_kl = 0.0;
};

struct LensSet {
    int n_layers = 0;
    int n_heads = 0;
    bool shared_per_layer = false;
    std::vector<HeadLens> lenses;  // layer-major, n_layers * n_heads entries

    const HeadLens& at(int layer, int head) const { return lenses.at(static_cast<std::size_t>(layer * n_heads + head)); }
    HeadLens& at(int layer, int head) { return lenses.at(static_cast<std::size_t>(layer * n_heads + head)); }
};

struct LensTrainOptions {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 1;
    std::uint64_t seed = 0;
    bool share_per_layer = false;
    std::size_t eval_samples = 512;  // subset used for init/final KL bookkeeping
    unsigned threads = 0;
};

struct LensTrainStats {
    std::vector<double> step_loss;      // mean KL across heads per SGD step
    std::vector<double> init_layer_kl;  // per layer, identity-init baseline
    std::vector<double> final_layer_kl;
    std::size_t samples = 0;
    int steps = 0;
};

// Training samples: per sequence, every head's residual update at the final
// position plus the final residual (pre-unembedding) that defines the
// target distribution.
struct LensTrainingData {
    std::vector<Eigen::MatrixXf> head_updates;    // per sample: d_model x (n_layers * n_heads)
    std::vector<Eigen::VectorXf> final_residual;  // per sample: d_model
};

LensTrainingData collect_training_data(const Model& model, std::span<const TokenSequence> corpus,
                                       unsigned threads);

// Plain SGD on KL(final distribution || lens distribution) with analytic
// gradients through the softmax, unembedding and final layer norm.
LensSet train_lenses(const Model& model, const LensTrainingData& data, const LensTrainOptions& opts,
                     LensTrainStats* stats = nullptr);
LensSet train_lenses(const Model& model, std::span<const TokenSequence> corpus,
                     const LensTrainOptions& opts, LensTrainStats* stats = nullptr);

// Pseudo-logits over the vocabulary for one head update.
Eigen::VectorXf translate(const Model& model, const HeadLens& lens, const Eigen::VectorXf& update);

// p[ctok] - p[ntok] under softmax(translate(...)); positive favors the token
// that continues the cycle.
double contrast(const Model& model, const HeadLens& lens, const Eigen::VectorXf& update, TokenId ctok,
                TokenId ntok);

// Mean KL(final || lens) over a sample set, one value per head.
std::vector<double> evaluate_lens_kl(const Model& model, const LensSet& lenses,
                                     const LensTrainingData& data, std::size_t max_samples,
                                     unsigned threads);

// lens.l{L}.h{H}.W / lens.l{L}.h{H}.b in the flat tensor-archive format.
void save_lenses(const LensSet& lenses, const std::string& path);
LensSet load_lenses(const std::string& path, const Model& model);

// Per-head contrast trajectory across cycle indices 0..k-1 (0 = input),
// averaged over tokens within a cycle, then over pairs.
struct ContrastTrajectory {
    int layer = 0;
    int head = 0;
    std::vector<double> contrast;      // per cycle index
    std::vector<std::size_t> count;    // pairs contributing per cycle index
    double mean_contrast = 0.0;        // over cycle indices
};

struct TrajectorySet {
    Condition condition = Condition::kNatural;
    int k_cycles = 8;
    std::vector<ContrastTrajectory> heads;      // all n_layers * n_heads
    std::vector<std::pair<int, int>> top2;      // (layer, head), highest mean contrast
    std::vector<std::pair<int, int>> bottom2;   // lowest mean contrast
};

TrajectorySet head_trajectories(const Model& model, const LensSet& lenses,
                                std::span<const PromptPair> pairs, Condition condition,
                                int k_cycles = 8, unsigned threads = 0);

}  // namespace loopscope
