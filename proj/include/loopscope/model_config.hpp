#pragma once

#include <string>

namespace loopscope {

// Architecture constants for a GPT-NeoX-family decoder. Loaded from a JSON
// sidecar; both our canonical field names and the Hugging Face GPTNeoX config
// names are accepted, so a published checkpoint's config.json works as-is.
struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int vocab_size = 0;
    float rotary_fraction = 0.25f;
    int max_context = 2048;
    bool parallel_residual = true;
    float layernorm_epsilon = 1e-5f;
    std::string model_id;
    std::string tokenizer = "byte";  // "byte" or "bpe"

    int rotary_dims() const { return static_cast<int>(static_cast<float>(d_head) * rotary_fraction); }

    // Enforces d_model == n_heads * d_head, 0 < rotary_fraction <= 1 with an
    // even rotary dim count, and vocab_size >= 2. Throws on violation.
    void validate() const;

    static ModelConfig from_json_text(const std::string& text, const std::string& origin);
    static ModelConfig load(const std::string& path);
    std::string to_json_text() const;
};

}  // namespace loopscope
