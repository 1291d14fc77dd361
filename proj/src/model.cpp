#include "lorakit/model.hpp"

#include <cmath>

#include "lorakit/errors.hpp"
#include "lorakit/rng.hpp"
#include "lorakit/serialize.hpp"

namespace lorakit {

namespace {

constexpr double kInitStd = 0.02;

std::string layer_prefix(std::size_t i) { return "layers." + std::to_string(i) + "."; }

Tensor project(const ProjectionFn& projection, const std::string& role, const Tensor& weight,
               const Tensor& x) {
    if (projection) return projection(role, weight, x);
    return linear(x, weight);
}

}  // namespace

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
    };
    positive(vocab_size, "vocab_size");
    positive(d_model, "d_model");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_ff, "d_ff");
    positive(max_seq_len, "max_seq_len");
    if (n_classes < 2) throw ConfigError("model config: n_classes must be at least 2");
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if ((d_model / n_heads) % 2 != 0) {
        throw ConfigError("model config: head dimension " + std::to_string(d_model / n_heads) +
                          " must be even for rotary embeddings");
    }
    if (rope_theta <= 0.0) throw ConfigError("model config: rope_theta must be positive");
    if (rmsnorm_eps <= 0.0) throw ConfigError("model config: rmsnorm_eps must be positive");
}

std::vector<std::pair<std::string, Tensor>> TransformerWeights::named_tensors() const {
    std::vector<std::pair<std::string, Tensor>> named;
    named.emplace_back("embedding.token", token_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = layer_prefix(i);
        named.emplace_back(prefix + "attention.query", layers[i].wq);
        named.emplace_back(prefix + "attention.key", layers[i].wk);
        named.emplace_back(prefix + "attention.value", layers[i].wv);
        named.emplace_back(prefix + "attention.output", layers[i].wo);
        named.emplace_back(prefix + "ffn.gate", layers[i].w_gate);
        named.emplace_back(prefix + "ffn.up", layers[i].w_up);
        named.emplace_back(prefix + "ffn.down", layers[i].w_down);
        named.emplace_back(prefix + "norm.attention", layers[i].attn_norm_gain);
        named.emplace_back(prefix + "norm.ffn", layers[i].ff_norm_gain);
    }
    named.emplace_back("norm.final", final_norm_gain);
    named.emplace_back("head.lm", lm_head);
    named.emplace_back("head.classifier", classifier_head);
    return named;
}

void TransformerWeights::set_all_requires_grad(bool flag) {
    for (auto& [name, tensor] : named_tensors()) {
        Tensor(tensor).set_requires_grad(flag);
    }
}

TransformerWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    auto matrix = [&](std::size_t rows, std::size_t cols) {
        return Tensor::gaussian({rows, cols}, 0.0, kInitStd, rng, /*requires_grad=*/true);
    };
    auto gain = [&](std::size_t n) { return Tensor::full({n}, 1.0, /*requires_grad=*/true); };

    TransformerWeights weights;
    weights.config = config;
    weights.token_embedding = matrix(config.vocab_size, config.d_model);
    weights.layers.reserve(config.n_layers);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        LayerWeights layer;
        layer.wq = matrix(config.d_model, config.d_model);
        layer.wk = matrix(config.d_model, config.d_model);
        layer.wv = matrix(config.d_model, config.d_model);
        layer.wo = matrix(config.d_model, config.d_model);
        layer.w_gate = matrix(config.d_ff, config.d_model);
        layer.w_up = matrix(config.d_ff, config.d_model);
        layer.w_down = matrix(config.d_model, config.d_ff);
        layer.attn_norm_gain = gain(config.d_model);
        layer.ff_norm_gain = gain(config.d_model);
        weights.layers.push_back(std::move(layer));
    }
    weights.final_norm_gain = gain(config.d_model);
    weights.lm_head = matrix(config.vocab_size, config.d_model);
    weights.classifier_head = matrix(config.n_classes, config.d_model);
    return weights;
}

Tensor forward_hidden(const TransformerWeights& weights, std::span<const int> token_ids,
                      const ProjectionFn& projection) {
    const ModelConfig& config = weights.config;
    if (token_ids.empty()) throw ContractError("forward: empty token sequence");
    if (token_ids.size() > config.max_seq_len) {
        throw ContractError("forward: sequence length " + std::to_string(token_ids.size()) +
                            " exceeds max_seq_len " + std::to_string(config.max_seq_len) +
                            "; truncate upstream");
    }

    Tensor x = embedding_rows(weights.token_embedding, token_ids);
    const std::size_t head_dim = config.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    for (std::size_t i = 0; i < weights.layers.size(); ++i) {
        const LayerWeights& layer = weights.layers[i];
        const std::string prefix = layer_prefix(i);

        Tensor h = rmsnorm(x, layer.attn_norm_gain, config.rmsnorm_eps);
        Tensor q = project(projection, prefix + "attention.query", layer.wq, h);
        Tensor k = project(projection, prefix + "attention.key", layer.wk, h);
        Tensor v = project(projection, prefix + "attention.value", layer.wv, h);
        q = rope_sequence(q, config.n_heads, config.rope_theta);
        k = rope_sequence(k, config.n_heads, config.rope_theta);

        std::vector<Tensor> heads;
        heads.reserve(config.n_heads);
        for (std::size_t head = 0; head < config.n_heads; ++head) {
            Tensor qh = col_slice(q, head * head_dim, head_dim);
            Tensor kh = col_slice(k, head * head_dim, head_dim);
            Tensor vh = col_slice(v, head * head_dim, head_dim);
            Tensor scores = scale(linear(qh, kh), attn_scale);  // qh · khᵀ
            Tensor attention = causal_softmax(scores);
            heads.push_back(matmul(attention, vh));
        }
        Tensor merged = concat_cols(heads);
        Tensor attn_out = project(projection, prefix + "attention.output", layer.wo, merged);
        x = add(x, attn_out);

        Tensor f = rmsnorm(x, layer.ff_norm_gain, config.rmsnorm_eps);
        Tensor gated = mul(silu(project(projection, prefix + "ffn.gate", layer.w_gate, f)),
                           project(projection, prefix + "ffn.up", layer.w_up, f));
        Tensor ff_out = project(projection, prefix + "ffn.down", layer.w_down, gated);
        x = add(x, ff_out);
    }
    return rmsnorm(x, weights.final_norm_gain, config.rmsnorm_eps);
}

Tensor forward_lm(const TransformerWeights& weights, std::span<const int> token_ids,
                  const ProjectionFn& projection) {
    Tensor hidden = forward_hidden(weights, token_ids, projection);
    return linear(hidden, weights.lm_head);
}

Tensor forward_classifier(const TransformerWeights& weights, std::span<const int> token_ids,
                          const ProjectionFn& projection) {
    Tensor hidden = forward_hidden(weights, token_ids, projection);
    Tensor pooled = last_row(hidden);  // [1 x d_model]
    Tensor logits = linear(pooled, weights.classifier_head);
    return reshape(logits, {weights.config.n_classes});
}

std::pair<std::size_t, std::size_t> count_params(const TransformerWeights& weights) {
    std::size_t total = 0, trainable = 0;
    for (const auto& [name, tensor] : weights.named_tensors()) {
        total += tensor.numel();
        if (tensor.requires_grad()) trainable += tensor.numel();
    }
    return {total, trainable};
}

void save_checkpoint(const std::filesystem::path& path, const TransformerWeights& weights) {
    NamedTensorFile file;
    file.kind = "checkpoint";
    file.meta = {
        {"vocab_size", weights.config.vocab_size},
        {"d_model", weights.config.d_model},
        {"n_layers", weights.config.n_layers},
        {"n_heads", weights.config.n_heads},
        {"d_ff", weights.config.d_ff},
        {"max_seq_len", weights.config.max_seq_len},
        {"n_classes", weights.config.n_classes},
        {"rope_theta", weights.config.rope_theta},
        {"rmsnorm_eps", weights.config.rmsnorm_eps},
    };
    file.tensors = weights.named_tensors();
    write_tensor_file(path, file);
}

TransformerWeights load_checkpoint(const std::filesystem::path& path) {
    NamedTensorFile file = read_tensor_file(path);
    if (file.kind != "checkpoint") {
        throw DataError(path.string() + ": expected a checkpoint file, found kind '" + file.kind +
                        "'");
    }
    ModelConfig config;
    try {
        config.vocab_size = file.meta.at("vocab_size").get<std::size_t>();
        config.d_model = file.meta.at("d_model").get<std::size_t>();
        config.n_layers = file.meta.at("n_layers").get<std::size_t>();
        config.n_heads = file.meta.at("n_heads").get<std::size_t>();
        config.d_ff = file.meta.at("d_ff").get<std::size_t>();
        config.max_seq_len = file.meta.at("max_seq_len").get<std::size_t>();
        config.n_classes = file.meta.at("n_classes").get<std::size_t>();
        config.rope_theta = file.meta.at("rope_theta").get<double>();
        config.rmsnorm_eps = file.meta.at("rmsnorm_eps").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": incomplete checkpoint config: " + e.what());
    }
    config.validate();

    // Build an empty skeleton, then fill tensors by position with name and
    // shape checks against the expected layout.
    TransformerWeights weights;
    weights.config = config;
    weights.layers.resize(config.n_layers);
    std::vector<std::pair<std::string, Tensor*>> slots;
    slots.emplace_back("embedding.token", &weights.token_embedding);
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        const std::string prefix = layer_prefix(i);
        slots.emplace_back(prefix + "attention.query", &weights.layers[i].wq);
        slots.emplace_back(prefix + "attention.key", &weights.layers[i].wk);
        slots.emplace_back(prefix + "attention.value", &weights.layers[i].wv);
        slots.emplace_back(prefix + "attention.output", &weights.layers[i].wo);
        slots.emplace_back(prefix + "ffn.gate", &weights.layers[i].w_gate);
        slots.emplace_back(prefix + "ffn.up", &weights.layers[i].w_up);
        slots.emplace_back(prefix + "ffn.down", &weights.layers[i].w_down);
        slots.emplace_back(prefix + "norm.attention", &weights.layers[i].attn_norm_gain);
        slots.emplace_back(prefix + "norm.ffn", &weights.layers[i].ff_norm_gain);
    }
    slots.emplace_back("norm.final", &weights.final_norm_gain);
    slots.emplace_back("head.lm", &weights.lm_head);
    slots.emplace_back("head.classifier", &weights.classifier_head);

    if (file.tensors.size() != slots.size()) {
        throw DataError(path.string() + ": checkpoint holds " +
                        std::to_string(file.tensors.size()) + " tensors, expected " +
                        std::to_string(slots.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& [expected_name, slot] = slots[i];
        auto& [name, tensor] = file.tensors[i];
        if (name != expected_name) {
            throw DataError(path.string() + ": tensor " + std::to_string(i) + " is '" + name +
                            "', expected '" + expected_name + "'");
        }
        *slot = tensor;
        slot->set_requires_grad(true);
    }

    // Shape consistency against the config.
    auto check = [&](const Tensor& t, std::vector<std::size_t> shape, const std::string& name) {
        if (t.shape() != shape) {
            throw DataError(path.string() + ": tensor '" + name + "' has shape " +
                            shape_to_string(t.shape()) + ", expected " + shape_to_string(shape));
        }
    };
    check(weights.token_embedding, {config.vocab_size, config.d_model}, "embedding.token");
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        const std::string prefix = layer_prefix(i);
        check(weights.layers[i].wq, {config.d_model, config.d_model}, prefix + "attention.query");
        check(weights.layers[i].wk, {config.d_model, config.d_model}, prefix + "attention.key");
        check(weights.layers[i].wv, {config.d_model, config.d_model}, prefix + "attention.value");
        check(weights.layers[i].wo, {config.d_model, config.d_model}, prefix + "attention.output");
        check(weights.layers[i].w_gate, {config.d_ff, config.d_model}, prefix + "ffn.gate");
        check(weights.layers[i].w_up, {config.d_ff, config.d_model}, prefix + "ffn.up");
        check(weights.layers[i].w_down, {config.d_model, config.d_ff}, prefix + "ffn.down");
        check(weights.layers[i].attn_norm_gain, {config.d_model}, prefix + "norm.attention");
        check(weights.layers[i].ff_norm_gain, {config.d_model}, prefix + "norm.ffn");
    }
    check(weights.final_norm_gain, {config.d_model}, "norm.final");
    check(weights.lm_head, {config.vocab_size, config.d_model}, "head.lm");
    check(weights.classifier_head, {config.n_classes, config.d_model}, "head.classifier");
    return weights;
}

}  // namespace lorakit
