#include "lorakit/lora.hpp"

#include <iostream>
#include <map>

#include "lorakit/errors.hpp"
#include "lorakit/serialize.hpp"

namespace lorakit {

const std::set<std::string> kKnownLoraRoles = {
    "query_projection",
    "key_projection",
    "value_projection",
    "output_projection",
};

namespace {

// Fixed role order so adapter creation and serialization are deterministic.
const std::vector<std::pair<std::string, std::string>> kRoleOrder = {
    {"query_projection", "attention.query"},
    {"key_projection", "attention.key"},
    {"value_projection", "attention.value"},
    {"output_projection", "attention.output"},
};

std::map<std::string, Tensor> tensor_index(const TransformerWeights& weights) {
    std::map<std::string, Tensor> index;
    for (const auto& [name, tensor] : weights.named_tensors()) index.emplace(name, tensor);
    return index;
}

}  // namespace

void LoraConfig::validate() const {
    if (rank == 0) throw ConfigError("lora config: rank must be positive");
    if (alpha <= 0.0) throw ConfigError("lora config: alpha must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        throw ConfigError("lora config: dropout_p must lie in [0, 1)");
    }
    if (init_std <= 0.0) throw ConfigError("lora config: init_std must be positive");
    if (target_roles.empty()) throw ConfigError("lora config: no target matrices");
    for (const std::string& role : target_roles) {
        if (!kKnownLoraRoles.count(role)) {
            throw ConfigError("lora config: unknown matrix role '" + role + "'");
        }
    }
}

const LoraAdapter* AdaptedModel::find_adapter(const std::string& base_name) const {
    for (const LoraAdapter& adapter : adapters) {
        if (adapter.base_name == base_name) return &adapter;
    }
    return nullptr;
}

AdaptedModel inject(TransformerWeights weights, const LoraConfig& config, std::uint64_t seed) {
    config.validate();
    if (weights.lora_injected) {
        throw ConfigError("inject: adapters already attached; stacking is not supported");
    }
    weights.config.validate();

    // All targeted matrices are attention projections, [d_model x d_model].
    const std::size_t d = weights.config.d_model;
    const std::size_t limit = d / 2;
    if (config.rank > limit) {
        throw ConfigError("inject: rank " + std::to_string(config.rank) +
                          " exceeds min(d,k)/2 = " + std::to_string(limit) +
                          " for a " + std::to_string(d) + "x" + std::to_string(d) + " projection");
    }
    if (config.rank == limit) {
        std::cerr << "warning: lora rank " << config.rank << " equals min(d,k)/2 = " << limit
                  << "; the update is not strictly low-rank\n";
    }

    AdaptedModel model;
    model.base = std::move(weights);
    model.config = config;
    model.base.set_all_requires_grad(false);
    model.base.classifier_head.set_requires_grad(true);

    Rng rng(seed);
    for (std::size_t layer = 0; layer < model.base.config.n_layers; ++layer) {
        for (const auto& [role, suffix] : kRoleOrder) {
            if (!config.target_roles.count(role)) continue;
            LoraAdapter adapter;
            adapter.base_name = "layers." + std::to_string(layer) + "." + suffix;
            adapter.w_a = Tensor::zeros({d, config.rank}, /*requires_grad=*/true);
            adapter.w_b =
                Tensor::gaussian({config.rank, d}, 0.0, config.init_std, rng,
                                 /*requires_grad=*/true);
            adapter.scale = config.scale();
            model.adapters.push_back(std::move(adapter));
        }
    }
    model.base.lora_injected = true;
    return model;
}

Tensor adapted_projection(const LoraAdapter& adapter, const Tensor& w0, const Tensor& x,
                          bool training, double dropout_p, Rng* rng) {
    Tensor base_out = linear(x, w0);
    Tensor branch_in = x;
    if (training && dropout_p > 0.0) {
        if (rng == nullptr) {
            throw ContractError("adapted_projection: training with dropout needs an rng stream");
        }
        branch_in = dropout(x, dropout_p, *rng);
    }
    Tensor low = linear(branch_in, adapter.w_b);   // W_B · x
    Tensor update = linear(low, adapter.w_a);      // W_A · (W_B · x)
    return add(base_out, scale(update, adapter.scale));
}

namespace {

ProjectionFn make_projection(const AdaptedModel& model, bool training, Rng* rng) {
    return [&model, training, rng](const std::string& role, const Tensor& w, const Tensor& x) {
        const LoraAdapter* adapter = model.find_adapter(role);
        if (adapter == nullptr) return linear(x, w);
        return adapted_projection(*adapter, w, x, training, model.config.dropout_p, rng);
    };
}

}  // namespace

Tensor AdaptedModel::classifier_logits(std::span<const int> token_ids, bool training,
                                       Rng* rng) const {
    return forward_classifier(base, token_ids, make_projection(*this, training, rng));
}

Tensor AdaptedModel::lm_logits(std::span<const int> token_ids, bool training, Rng* rng) const {
    return forward_lm(base, token_ids, make_projection(*this, training, rng));
}

std::pair<std::size_t, std::size_t> AdaptedModel::count_params() const {
    auto [total, trainable] = lorakit::count_params(base);
    for (const LoraAdapter& adapter : adapters) {
        std::size_t n = adapter.w_a.numel() + adapter.w_b.numel();
        total += n;
        trainable += n;
    }
    return {total, trainable};
}

Tensor merged_matrix(const LoraAdapter& adapter, const Tensor& w0) {
    autograd::NoGradGuard guard;
    Tensor delta = matmul(adapter.w_a, adapter.w_b);
    return add(w0, scale(delta, adapter.scale)).clone();
}

void AdaptedModel::merge_into_base() {
    auto index = tensor_index(base);
    for (const LoraAdapter& adapter : adapters) {
        auto it = index.find(adapter.base_name);
        if (it == index.end()) {
            throw ContractError("merge: no base matrix named " + adapter.base_name);
        }
        Tensor target = it->second;
        Tensor merged = merged_matrix(adapter, target);
        target.values_mut() = merged.values();
    }
    adapters.clear();
    base.lora_injected = false;
}

void save_adapters(const std::filesystem::path& path, const AdaptedModel& model) {
    NamedTensorFile file;
    file.kind = "lora-adapters";
    file.meta = {
        {"rank", model.config.rank},
        {"alpha", model.config.alpha},
        {"dropout_p", model.config.dropout_p},
        {"init_std", model.config.init_std},
        {"target_roles", model.config.target_roles},
        {"d_model", model.base.config.d_model},
        {"n_layers", model.base.config.n_layers},
        {"n_classes", model.base.config.n_classes},
    };
    for (const LoraAdapter& adapter : model.adapters) {
        file.tensors.emplace_back(adapter.base_name + ".A", adapter.w_a);
        file.tensors.emplace_back(adapter.base_name + ".B", adapter.w_b);
    }
    // The classifier head trains alongside the adapters; persist it with them
    // so a saved fine-tune is complete.
    file.tensors.emplace_back("head.classifier", model.base.classifier_head);
    write_tensor_file(path, file);
}

AdaptedModel load_adapters(const std::filesystem::path& path, TransformerWeights base) {
    NamedTensorFile file = read_tensor_file(path);
    if (file.kind != "lora-adapters") {
        throw DataError(path.string() + ": expected an adapter file, found kind '" + file.kind +
                        "'");
    }
    LoraConfig config;
    std::size_t stored_d_model = 0, stored_layers = 0, stored_classes = 0;
    try {
        config.rank = file.meta.at("rank").get<std::size_t>();
        config.alpha = file.meta.at("alpha").get<double>();
        config.dropout_p = file.meta.at("dropout_p").get<double>();
        config.init_std = file.meta.at("init_std").get<double>();
        config.target_roles = file.meta.at("target_roles").get<std::set<std::string>>();
        stored_d_model = file.meta.at("d_model").get<std::size_t>();
        stored_layers = file.meta.at("n_layers").get<std::size_t>();
        stored_classes = file.meta.at("n_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": incomplete adapter config: " + e.what());
    }
    if (stored_d_model != base.config.d_model || stored_layers != base.config.n_layers ||
        stored_classes != base.config.n_classes) {
        throw DataError(path.string() + ": adapters were trained for d_model=" +
                        std::to_string(stored_d_model) + ", n_layers=" +
                        std::to_string(stored_layers) + ", n_classes=" +
                        std::to_string(stored_classes) + "; base model has d_model=" +
                        std::to_string(base.config.d_model) + ", n_layers=" +
                        std::to_string(base.config.n_layers) + ", n_classes=" +
                        std::to_string(base.config.n_classes));
    }

    // Start from a clean injection to get freezing and ordering, then replace
    // the factors with the stored ones.
    AdaptedModel model = inject(std::move(base), config, /*seed=*/0);
    const std::size_t expected = model.adapters.size() * 2 + 1;
    if (file.tensors.size() != expected) {
        throw DataError(path.string() + ": adapter file holds " +
                        std::to_string(file.tensors.size()) + " tensors, expected " +
                        std::to_string(expected));
    }
    for (std::size_t i = 0; i < model.adapters.size(); ++i) {
        LoraAdapter& adapter = model.adapters[i];
        auto& [name_a, tensor_a] = file.tensors[2 * i];
        auto& [name_b, tensor_b] = file.tensors[2 * i + 1];
        if (name_a != adapter.base_name + ".A" || name_b != adapter.base_name + ".B") {
            throw DataError(path.string() + ": unexpected adapter order at entry " +
                            std::to_string(i) + " ('" + name_a + "')");
        }
        if (tensor_a.shape() != adapter.w_a.shape() || tensor_b.shape() != adapter.w_b.shape()) {
            throw DataError(path.string() + ": adapter '" + adapter.base_name +
                            "' shape mismatch against the base model");
        }
        adapter.w_a = tensor_a;
        adapter.w_b = tensor_b;
        adapter.w_a.set_requires_grad(true);
        adapter.w_b.set_requires_grad(true);
    }
    auto& [head_name, head_tensor] = file.tensors.back();
    if (head_name != "head.classifier") {
        throw DataError(path.string() + ": missing classifier head entry");
    }
    if (head_tensor.shape() != model.base.classifier_head.shape()) {
        throw DataError(path.string() + ": classifier head shape mismatch");
    }
    model.base.classifier_head.values_mut() = head_tensor.values();
    return model;
}

}  // namespace lorakit
