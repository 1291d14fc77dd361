#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "lorakit/model.hpp"
#include "lorakit/rng.hpp"
#include "lorakit/tensor.hpp"

namespace lorakit {

// Roles that can carry adapters, resolved against each attention layer.
extern const std::set<std::string> kKnownLoraRoles;

struct LoraConfig {
    std::size_t rank = 8;
    double alpha = 16.0;
    double dropout_p = 0.1;
    std::set<std::string> target_roles = {"query_projection", "value_projection"};
    double init_std = 0.02;

    double scale() const { return alpha / static_cast<double>(rank); }
    void validate() const;
};

// One low-rank factor pair attached to a frozen base matrix W0 [d x k]:
// h = W0·x + (alpha/rank) · W_A · (W_B · x~), with W_A [d x rank] zero-initialized
// and W_B [rank x k] Gaussian, so the update is zero until training moves W_A.
struct LoraAdapter {
    std::string base_name;  // e.g. "layers.0.attention.query"
    Tensor w_a;             // [d x rank], zeros
    Tensor w_b;             // [rank x k], Gaussian(0, init_std)
    double scale = 1.0;
};

struct AdaptedModel {
    TransformerWeights base;
    LoraConfig config;
    std::vector<LoraAdapter> adapters;

    const LoraAdapter* find_adapter(const std::string& base_name) const;

    // Forward passes routing targeted projections through their adapters.
    // In training mode the adapter-branch input is dropped out using `rng`.
    Tensor classifier_logits(std::span<const int> token_ids, bool training = false,
                             Rng* rng = nullptr) const;
    Tensor lm_logits(std::span<const int> token_ids, bool training = false,
                     Rng* rng = nullptr) const;

    // (total, trainable) including adapter factors.
    std::pair<std::size_t, std::size_t> count_params() const;

    // Folds every adapter into its base matrix (W0 + scale·W_A·W_B), drops the
    // adapters, and clears the injection mark. Frozen flags are untouched.
    void merge_into_base();
};

// Freezes every base matrix except the classifier head, then attaches a fresh
// zero-update adapter to each targeted projection. Deterministic under seed.
AdaptedModel inject(TransformerWeights weights, const LoraConfig& config, std::uint64_t seed);

// One adapted projection: h = x·W0ᵀ + scale · ((dropout(x)·W_Bᵀ)·W_Aᵀ).
Tensor adapted_projection(const LoraAdapter& adapter, const Tensor& w0, const Tensor& x,
                          bool training, double dropout_p, Rng* rng);

// W0 + scale·W_A·W_B as a detached plain matrix; W0 itself is untouched.
Tensor merged_matrix(const LoraAdapter& adapter, const Tensor& w0);

void save_adapters(const std::filesystem::path& path, const AdaptedModel& model);
// Re-attaches previously saved adapters to a compatible base (shape and config
// checked; mismatch is a data error).
AdaptedModel load_adapters(const std::filesystem::path& path, TransformerWeights base);

}  // namespace lorakit
