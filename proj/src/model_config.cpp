#include "loopscope/model_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace loopscope {

namespace {
using json = nlohmann::json;

template <typename T>
bool pick(const json& j, T& out, const char* a, const char* b = nullptr) {
    if (j.contains(a)) {
        out = j.at(a).get<T>();
        return true;
    }
    if (b && j.contains(b)) {
        out = j.at(b).get<T>();
        return true;
    }
    return false;
}
}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) throw std::runtime_error("model config: n_layers must be >= 1");
    if (n_heads < 1) throw std::runtime_error("model config: n_heads must be >= 1");
    if (d_head < 1 || d_model != n_heads * d_head) {
        throw std::runtime_error("model config: d_model must equal n_heads * d_head");
    }
    if (vocab_size < 2) throw std::runtime_error("model config: vocab_size must be >= 2");
    if (!(rotary_fraction > 0.0f && rotary_fraction <= 1.0f)) {
        throw std::runtime_error("model config: rotary_fraction must be in (0, 1]");
    }
    if (rotary_dims() < 2 || rotary_dims() % 2 != 0) {
        throw std::runtime_error("model config: rotary dims (d_head * rotary_fraction) must be even and >= 2");
    }
    if (max_context < 1) throw std::runtime_error("model config: max_context must be >= 1");
    if (!(layernorm_epsilon > 0.0f)) throw std::runtime_error("model config: layernorm_epsilon must be positive");
}

ModelConfig ModelConfig::from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("model config " + origin + " is not valid JSON: " + e.what());
    }

    ModelConfig cfg;
    if (!pick(j, cfg.n_layers, "n_layers", "num_hidden_layers")) {
        throw std::runtime_error("model config " + origin + ": missing n_layers");
    }
    if (!pick(j, cfg.n_heads, "n_heads", "num_attention_heads")) {
        throw std::runtime_error("model config " + origin + ": missing n_heads");
    }
    if (!pick(j, cfg.d_model, "d_model", "hidden_size")) {
        throw std::runtime_error("model config " + origin + ": missing d_model");
    }
    if (!pick(j, cfg.vocab_size, "vocab_size")) {
        throw std::runtime_error("model config " + origin + ": missing vocab_size");
    }
    if (!pick(j, cfg.d_head, "d_head")) {
        if (cfg.n_heads > 0 && cfg.d_model % cfg.n_heads == 0) {
            cfg.d_head = cfg.d_model / cfg.n_heads;
        } else {
            throw std::runtime_error("model config " + origin + ": missing d_head");
        }
    }
    pick(j, cfg.rotary_fraction, "rotary_fraction", "rotary_pct");
    pick(j, cfg.max_context, "max_context", "max_position_embeddings");
    pick(j, cfg.parallel_residual, "parallel_residual", "use_parallel_residual");
    pick(j, cfg.layernorm_epsilon, "layernorm_epsilon", "layer_norm_eps");
    pick(j, cfg.model_id, "model_id", "_name_or_path");
    pick(j, cfg.tokenizer, "tokenizer");
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("cannot open model config: " + path);
    std::ostringstream buf;
    buf << file.rdbuf();
    return from_json_text(buf.str(), path);
}

std::string ModelConfig::to_json_text() const {
    json j{
        {"n_layers", n_layers},
        {"n_heads", n_heads},
        {"d_model", d_model},
        {"d_head", d_head},
        {"vocab_size", vocab_size},
        {"rotary_fraction", rotary_fraction},
        {"max_context", max_context},
        {"parallel_residual", parallel_residual},
        {"layernorm_epsilon", layernorm_epsilon},
        {"model_id", model_id},
        {"tokenizer", tokenizer},
    };
    return j.dump(2) + "\n";
}

}  // namespace loopscope
