#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lorakit/bpe.hpp"
#include "lorakit/corpus.hpp"
#include "lorakit/lora.hpp"
#include "lorakit/model.hpp"
#include "lorakit/tensor.hpp"

namespace lorakit {

struct TrainingConfig {
    double learning_rate = 2e-5;
    double adam_eps = 1e-8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double weight_decay = 0.01;
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::vector<double> class_weights;  // empty = uniform
    std::uint64_t seed = 0;
    // Sequences longer than the model's max_seq_len keep their final tokens
    // by default (conversations escalate late); false keeps the head instead.
    bool truncate_keep_tail = true;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean step loss across the epoch
    double accuracy = 0.0;  // training accuracy across the epoch
    double seconds = 0.0;   // wall-clock time for the epoch
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    std::vector<double> step_losses;  // every optimizer step, in order
};

// Tab-separated lines: epoch, loss, accuracy, seconds (full precision).
std::string render_training_log(const TrainingLog& log);
void save_training_log(const std::filesystem::path& path, const TrainingLog& log);

// loss = Σₙ lₙ / Σₙ w_{yₙ} with lₙ = −w_{yₙ}·log softmax(xₙ)[yₙ].
// logits [N x C]; stable via log-sum-exp; differentiable w.r.t. logits.
Tensor weighted_cross_entropy(const Tensor& logits, std::span<const int> targets,
                              std::span<const double> weights);

// Adam with decoupled weight decay and bias-corrected moments:
//   p ← p·(1 − lr·λ);  m ← β₁m + (1−β₁)g;  v ← β₂v + (1−β₂)g²
//   p ← p − lr·(m/(1−β₁ᵗ)) / (√(v/(1−β₂ᵗ)) + eps)
class AdamW {
public:
    AdamW(std::vector<Tensor> params, const TrainingConfig& config);

    // One update from the accumulated gradients. A parameter without a
    // gradient is a contract error (backward must have run).
    void step();
    void zero_grad();
    std::size_t steps_taken() const { return t_; }

private:
    struct Slot {
        Tensor param;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots_;
    double lr_, eps_, beta1_, beta2_, weight_decay_;
    std::size_t t_ = 0;
};

// Keeps the final (or initial, when keep_tail is false) max_len tokens.
std::vector<int> truncate_ids(std::vector<int> ids, std::size_t max_len, bool keep_tail);

// Self-supervised next-token training over raw documents; every weight
// trains. Logged accuracy is next-token top-1 accuracy.
TrainingLog pretrain_lm(TransformerWeights& weights, const BpeVocab& vocab,
                        const std::vector<std::string>& corpus, const TrainingConfig& config);

// Supervised fine-tuning of adapter factors plus the classifier head on
// labeled texts; the frozen base never changes. Logged accuracy is training
// accuracy per epoch.
TrainingLog finetune_classifier(AdaptedModel& model, const BpeVocab& vocab,
                                const std::vector<LabeledExample>& examples,
                                const TrainingConfig& config);

}  // namespace lorakit
