#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lorakit/tensor.hpp"

namespace lorakit {

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 0;
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::size_t d_ff = 0;
    std::size_t max_seq_len = 0;
    std::size_t n_classes = 2;
    double rope_theta = 10000.0;
    double rmsnorm_eps = 1e-6;

    // Throws ConfigError on any violated constraint (positivity, head
    // divisibility, even head dimension, n_classes >= 2).
    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }
};

struct LayerWeights {
    Tensor wq, wk, wv, wo;        // [d_model x d_model]
    Tensor w_gate, w_up;          // [d_ff x d_model]
    Tensor w_down;                // [d_model x d_ff]
    Tensor attn_norm_gain;        // [d_model]
    Tensor ff_norm_gain;          // [d_model]
};

// Decoder-only transformer: pre-norm RMSNorm, rotary attention, SwiGLU
// feed-forward, plus a next-token head and a classification head. All weight
// matrices are stored [out x in] and applied as x · Wᵀ.
struct TransformerWeights {
    ModelConfig config;
    Tensor token_embedding;       // [vocab_size x d_model]
    std::vector<LayerWeights> layers;
    Tensor final_norm_gain;       // [d_model]
    Tensor lm_head;               // [vocab_size x d_model]
    Tensor classifier_head;       // [n_classes x d_model]
    bool lora_injected = false;

    // Stable iteration order over every named matrix/gain.
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
    void set_all_requires_grad(bool flag);
};

// Gaussian(0, 0.02) matrices, unit gains; deterministic under seed.
TransformerWeights init_weights(const ModelConfig& config, std::uint64_t seed);

// Replaces the plain projection x·Wᵀ for adapted matrices. `role` names the
// projection ("layers.3.attention.value"); return the projected rows.
using ProjectionFn =
    std::function<Tensor(const std::string& role, const Tensor& weight, const Tensor& x)>;

// Hidden states after the final norm, one row per input token.
Tensor forward_hidden(const TransformerWeights& weights, std::span<const int> token_ids,
                      const ProjectionFn& projection = {});
// Next-token logits, [len x vocab_size]; position t predicts token t+1.
Tensor forward_lm(const TransformerWeights& weights, std::span<const int> token_ids,
                  const ProjectionFn& projection = {});
// Class logits from the last token's hidden state, shape [n_classes].
Tensor forward_classifier(const TransformerWeights& weights, std::span<const int> token_ids,
                          const ProjectionFn& projection = {});

// (total, trainable) parameter counts over the named tensors.
std::pair<std::size_t, std::size_t> count_params(const TransformerWeights& weights);

void save_checkpoint(const std::filesystem::path& path, const TransformerWeights& weights);
TransformerWeights load_checkpoint(const std::filesystem::path& path);

}  // namespace lorakit
