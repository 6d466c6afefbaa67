#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "loopscope/common.hpp"
#include "loopscope/model_config.hpp"
#include "loopscope/safetensors.hpp"

namespace loopscope {

// Weights for one decoder layer, GPT-NeoX tensor layout. Linear weights keep
// the checkpoint's [out, in] orientation, so y = W * x + b.
struct LayerWeights {
    Eigen::VectorXf ln_attn_w, ln_attn_b;   // input_layernorm
    Eigen::VectorXf ln_mlp_w, ln_mlp_b;     // post_attention_layernorm
    Eigen::MatrixXf qkv_w;                  // [3*d_model, d_model], per-head interleaved q|k|v
    Eigen::VectorXf qkv_b;
    Eigen::MatrixXf attn_out_w;             // [d_model, d_model]
    Eigen::VectorXf attn_out_b;
    Eigen::MatrixXf mlp_in_w;               // [4*d_model, d_model]
    Eigen::VectorXf mlp_in_b;
    Eigen::MatrixXf mlp_out_w;              // [d_model, 4*d_model]
    Eigen::VectorXf mlp_out_b;
};

struct WeightStore {
    Eigen::MatrixXf embed_t;   // [d_model, vocab], column per token id
    std::vector<LayerWeights> layers;
    Eigen::VectorXf ln_final_w, ln_final_b;
    Eigen::MatrixXf unembed;   // [vocab, d_model]

    // Conversion to/from the archive tensor map (GPT-NeoX names).
    static WeightStore from_archive(const TensorArchive& archive, const ModelConfig& cfg);
    std::map<std::string, TensorData> to_tensors() const;

    // Throws if any tensor contains NaN or infinity.
    void check_finite() const;
};

// Captured activations from one forward pass. Entries are parallel to the
// requested positions. Head update h of layer l is column l * n_heads + h.
struct ForwardTrace {
    std::vector<int> positions;
    std::vector<Eigen::VectorXf> logits;          // final logits per position
    bool captured = false;
    std::vector<Eigen::MatrixXf> head_updates;    // per position: [d_model, n_layers * n_heads]
    std::vector<Eigen::MatrixXf> norm_inputs;     // per position: [d_model, n_layers], norm(x^{l-1})
    std::vector<Eigen::MatrixXf> attn_branch;     // per position: [d_model, n_layers], whole-branch update
    std::vector<Eigen::VectorXf> final_residual;  // per position: residual stream before final norm
    std::vector<Eigen::VectorXf> final_normed;    // per position: after final norm, before unembedding

    const Eigen::MatrixXf& updates_at(std::size_t pos_index) const { return head_updates.at(pos_index); }
};

// Per-token teacher-forcing scores: probability assigned to the token that
// actually follows, and entropy of the predictive distribution (nats).
struct StepScore {
    double probability;
    double entropy;
};

class Model;

// Incremental decoding state (per-head K/V cache). One session per
// generation; the model itself is shared and immutable.
class DecodeSession {
public:
    explicit DecodeSession(const Model& model);

    // Appends one token and returns the final logits at the new position.
    const Eigen::VectorXf& step(TokenId token);

    const Eigen::VectorXf& prefill(std::span<const TokenId> tokens);

    int length() const { return length_; }

private:
    const Model& model_;
    int length_ = 0;
    std::vector<Eigen::MatrixXf> key_cache_;    // per layer: [d_model, capacity]
    std::vector<Eigen::MatrixXf> value_cache_;  // per layer: [d_model, capacity]
    Eigen::VectorXf logits_;
    Eigen::VectorXf x_, n1_, n2_, qkv_, context_, mlp_hidden_, scores_;
};

class Model {
public:
    Model(ModelConfig config, WeightStore weights);

    // archive + JSON config sidecar, e.g. model.safetensors + config.json.
    static Model load(const std::string& archive_path, const std::string& config_path);
    // Directory containing model.safetensors and config.json.
    static Model load_dir(const std::string& dir);

    const ModelConfig& config() const { return config_; }
    const WeightStore& weights() const { return weights_; }
    const std::string& id() const { return config_.model_id; }

    // Whole-sequence forward pass (matrix path). Captures final logits at the
    // requested positions; with capture_heads also the per-head residual
    // updates, the normalized layer inputs that produced them, the whole
    // attention-branch updates and the final residual before/after the last
    // norm. Empty `positions` means the last position only.
    ForwardTrace forward(std::span<const TokenId> tokens, bool capture_heads = false,
                         std::vector<int> positions = {}) const;

    // Greedy decoding with an incremental cache; ties break to the lowest
    // token id. The prompt is left-truncated if it cannot fit the context
    // window together with max_new tokens.
    Generation generate_greedy(const TokenSequence& prompt, int max_new) const;

    // softmax over the final-position logits, double precision.
    std::vector<double> final_distribution(std::span<const TokenId> tokens) const;

    // Teacher forcing: entry t scores the prediction of tokens[t+1] from
    // tokens[0..t]; result has tokens.size() - 1 entries.
    std::vector<StepScore> score_sequence(std::span<const TokenId> tokens) const;

    // Final layer norm as used before the unembedding (shared with lenses).
    Eigen::VectorXf final_norm(const Eigen::VectorXf& x) const;

    // Left-truncates a prompt so that prompt + max_new fits max_context.
    // Returns the effective prompt and whether truncation happened.
    std::pair<std::vector<TokenId>, bool> fit_prompt(std::span<const TokenId> prompt, int max_new) const;

    void check_tokens(std::span<const TokenId> tokens) const;

private:
    friend class DecodeSession;

    Eigen::MatrixXf layer_norm(const Eigen::MatrixXf& x, const Eigen::VectorXf& w,
                               const Eigen::VectorXf& b) const;
    Eigen::VectorXf layer_norm(const Eigen::VectorXf& x, const Eigen::VectorXf& w,
                               const Eigen::VectorXf& b) const;
    void apply_rotary(Eigen::Ref<Eigen::MatrixXf> qk, int first_position) const;
    void apply_rotary_col(Eigen::Ref<Eigen::VectorXf> qk, int position) const;

    ModelConfig config_;
    WeightStore weights_;
    std::vector<float> rotary_inv_freq_;
};

}  // namespace loopscope
