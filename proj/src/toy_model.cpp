#include "loopscope/toy_model.hpp"

#include <filesystem>
#include <fstream>

#include "loopscope/rng.hpp"

namespace loopscope {

namespace {

Eigen::MatrixXf random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, float stddev) {
    Eigen::MatrixXf m(rows, cols);
    // row-major fill order, matching the archive layout
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = static_cast<float>(rng.normal()) * stddev;
        }
    }
    return m;
}

Eigen::VectorXf random_vector(Rng& rng, Eigen::Index n, float stddev) {
    Eigen::VectorXf v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = static_cast<float>(rng.normal()) * stddev;
    return v;
}

}  // namespace

std::pair<ModelConfig, WeightStore> build_toy_model(std::uint64_t seed, int vocab_size) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_model = 64;
    cfg.d_head = 16;
    cfg.vocab_size = vocab_size;
    cfg.rotary_fraction = 0.25f;
    cfg.max_context = 512;
    cfg.parallel_residual = true;
    cfg.layernorm_epsilon = 1e-5f;
    cfg.tokenizer = "byte";
    cfg.model_id = "toy-seed" + std::to_string(seed);
    cfg.validate();

    const float w_std = 0.08f;
    const float b_std = 0.02f;
    // Shared mean across token embeddings: gives the residual stream the
    // anisotropy trained models have, which head-lens fitting relies on.
    const float mean_std = 0.2f;
    Rng rng(derive_seed(seed, "toy-model-weights"));

    WeightStore w;
    w.embed_t = random_matrix(rng, cfg.vocab_size, cfg.d_model, w_std).transpose();
    w.embed_t.colwise() += random_vector(rng, cfg.d_model, mean_std);
    w.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& lw : w.layers) {
        lw.ln_attn_w = Eigen::VectorXf::Ones(cfg.d_model);
        lw.ln_attn_b = Eigen::VectorXf::Zero(cfg.d_model);
        lw.ln_mlp_w = Eigen::VectorXf::Ones(cfg.d_model);
        lw.ln_mlp_b = Eigen::VectorXf::Zero(cfg.d_model);
        lw.qkv_w = random_matrix(rng, 3 * cfg.d_model, cfg.d_model, w_std);
        lw.qkv_b = random_vector(rng, 3 * cfg.d_model, b_std);
        lw.attn_out_w = random_matrix(rng, cfg.d_model, cfg.d_model, w_std);
        lw.attn_out_b = random_vector(rng, cfg.d_model, b_std);
        lw.mlp_in_w = random_matrix(rng, 4 * cfg.d_model, cfg.d_model, w_std);
        lw.mlp_in_b = random_vector(rng, 4 * cfg.d_model, b_std);
        lw.mlp_out_w = random_matrix(rng, cfg.d_model, 4 * cfg.d_model, w_std);
        lw.mlp_out_b = random_vector(rng, cfg.d_model, b_std);
    }
    w.ln_final_w = Eigen::VectorXf::Ones(cfg.d_model);
    w.ln_final_b = Eigen::VectorXf::Zero(cfg.d_model);
    w.unembed = random_matrix(rng, cfg.vocab_size, cfg.d_model, w_std);
    return {cfg, std::move(w)};
}

std::pair<ModelConfig, WeightStore> build_toy_model(std::uint64_t seed) {
    return build_toy_model(seed, 256);
}

void write_toy_model(std::uint64_t seed, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto [cfg, weights] = build_toy_model(seed);
    TensorArchive::write((fs::path(dir) / "model.safetensors").string(), weights.to_tensors());
    std::ofstream config_file(fs::path(dir) / "config.json", std::ios::trunc);
    config_file << cfg.to_json_text();
    if (!config_file) throw std::runtime_error("failed to write toy model config in " + dir);
}

}  // namespace loopscope
