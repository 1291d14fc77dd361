#include "lorakit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <string>
#include <utility>

#include "lorakit/errors.hpp"
#include "lorakit/serialize.hpp"

namespace lorakit {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t argmax(const std::vector<double>& values, std::size_t offset, std::size_t count) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < count; ++j) {
        if (values[offset + j] > values[offset + best]) best = j;
    }
    return best;
}

}  // namespace

void TrainingConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("training config: learning_rate must be positive");
    if (!(adam_eps > 0.0)) throw ConfigError("training config: adam_eps must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) {
        throw ConfigError("training config: adam_beta1 must lie in [0, 1)");
    }
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("training config: adam_beta2 must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) throw ConfigError("training config: weight_decay must be nonnegative");
    if (epochs == 0) throw ConfigError("training config: epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("training config: batch_size must be at least 1");
    if (!class_weights.empty()) {
        bool any_positive = false;
        for (double w : class_weights) {
            if (!(w >= 0.0)) throw ConfigError("training config: class weights must be nonnegative");
            any_positive |= (w > 0.0);
        }
        if (!any_positive) throw ConfigError("training config: class weights must not all be zero");
    }
}

std::string render_training_log(const TrainingLog& log) {
    std::string out = "epoch\tloss\taccuracy\tseconds\n";
    char line[160];
    for (const EpochRecord& r : log.epochs) {
        std::snprintf(line, sizeof line, "%zu\t%.17g\t%.17g\t%.17g\n", r.epoch, r.loss,
                      r.accuracy, r.seconds);
        out += line;
    }
    return out;
}

void save_training_log(const std::filesystem::path& path, const TrainingLog& log) {
    write_text_file(path, render_training_log(log));
}

Tensor weighted_cross_entropy(const Tensor& logits, std::span<const int> targets,
                              std::span<const double> weights) {
    if (!logits.defined() || logits.rank() != 2) {
        throw ContractError("weighted_cross_entropy: logits must be a [batch x classes] matrix");
    }
    const std::size_t n = logits.rows();
    const std::size_t c = logits.cols();
    if (targets.size() != n) {
        throw ContractError("weighted_cross_entropy: " + std::to_string(targets.size()) +
                            " targets for " + std::to_string(n) + " logit rows");
    }
    if (weights.size() != c) {
        throw ContractError("weighted_cross_entropy: " + std::to_string(weights.size()) +
                            " class weights for " + std::to_string(c) + " classes");
    }
    for (double w : weights) {
        if (!(w >= 0.0)) throw ContractError("weighted_cross_entropy: class weights must be nonnegative");
    }

    const std::vector<double>& x = logits.values();
    std::vector<double> probs(n * c);
    std::vector<int> tgts(targets.begin(), targets.end());
    double total = 0.0;
    double weight_sum = 0.0;
    for (std::size_t row = 0; row < n; ++row) {
        const int y = tgts[row];
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw DataError("weighted_cross_entropy: target " + std::to_string(y) + " at row " +
                            std::to_string(row) + " is outside [0, " + std::to_string(c) + ")");
        }
        double mx = x[row * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[row * c + j]);
        double sum_exp = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum_exp += std::exp(x[row * c + j] - mx);
        const double lse = mx + std::log(sum_exp);
        for (std::size_t j = 0; j < c; ++j) probs[row * c + j] = std::exp(x[row * c + j] - lse);
        const double wy = weights[static_cast<std::size_t>(y)];
        total += -wy * (x[row * c + static_cast<std::size_t>(y)] - lse);
        weight_sum += wy;
    }
    if (weight_sum == 0.0) {
        throw NumericError(
            "weighted_cross_entropy: the weights selected by the targets sum to zero; "
            "the normalized loss is undefined");
    }

    std::vector<double> wcopy(weights.begin(), weights.end());
    return Tensor::from_op(
        "weighted_cross_entropy", {1}, {total / weight_sum}, {logits},
        [probs = std::move(probs), tgts = std::move(tgts), wcopy = std::move(wcopy), weight_sum, n,
         c](const Tensor& out, const std::vector<Tensor>& in) {
            const double g = out.grad()[0];
            std::vector<double> dx(n * c);
            for (std::size_t row = 0; row < n; ++row) {
                const auto y = static_cast<std::size_t>(tgts[row]);
                const double factor = g * wcopy[y] / weight_sum;
                for (std::size_t j = 0; j < c; ++j) {
                    const double indicator = (j == y) ? 1.0 : 0.0;
                    dx[row * c + j] = factor * (probs[row * c + j] - indicator);
                }
            }
            Tensor(in[0]).accumulate_grad(dx);
        });
}

AdamW::AdamW(std::vector<Tensor> params, const TrainingConfig& config)
    : lr_(config.learning_rate),
      eps_(config.adam_eps),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      weight_decay_(config.weight_decay) {
    config.validate();
    if (params.empty()) throw ContractError("optimizer: no parameters to train");
    std::set<const void*> seen;
    for (Tensor& param : params) {
        if (!param.defined()) throw ContractError("optimizer: undefined parameter tensor");
        if (!param.requires_grad()) {
            throw ContractError("optimizer: a frozen tensor was passed as a parameter");
        }
        if (!seen.insert(param.impl().get()).second) {
            throw ContractError("optimizer: the same tensor was passed twice");
        }
        slots_.push_back(
            {param, std::vector<double>(param.numel(), 0.0), std::vector<double>(param.numel(), 0.0)});
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Slot& slot : slots_) {
        if (!slot.param.has_grad()) {
            throw ContractError("optimizer: a parameter has no gradient; run backward first");
        }
        const std::vector<double>& g = slot.param.grad();
        std::vector<double>& p = slot.param.values_mut();
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] *= 1.0 - lr_ * weight_decay_;
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            p[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

void AdamW::zero_grad() {
    for (Slot& slot : slots_) slot.param.zero_grad();
}

std::vector<int> truncate_ids(std::vector<int> ids, std::size_t max_len, bool keep_tail) {
    if (ids.size() <= max_len) return ids;
    if (keep_tail) {
        ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(max_len));
    } else {
        ids.resize(max_len);
    }
    return ids;
}

TrainingLog pretrain_lm(TransformerWeights& weights, const BpeVocab& vocab,
                        const std::vector<std::string>& corpus, const TrainingConfig& config) {
    config.validate();
    weights.config.validate();
    if (corpus.empty()) throw DataError("pretraining corpus is empty");
    if (weights.config.vocab_size < vocab.size()) {
        throw ConfigError("model vocab_size " + std::to_string(weights.config.vocab_size) +
                          " is smaller than the tokenizer vocabulary " +
                          std::to_string(vocab.size()));
    }

    std::vector<std::vector<int>> docs;
    docs.reserve(corpus.size());
    for (const std::string& text : corpus) {
        std::vector<int> ids =
            truncate_ids(encode(vocab, text), weights.config.max_seq_len, config.truncate_keep_tail);
        if (ids.size() >= 2) docs.push_back(std::move(ids));  // need one next-token target
    }
    if (docs.empty()) {
        throw DataError("no document yields at least two tokens; nothing to pretrain on");
    }

    weights.set_all_requires_grad(true);
    std::vector<Tensor> params;
    for (auto& [name, tensor] : weights.named_tensors()) {
        // The classifier head is not part of the next-token objective; it
        // receives no gradient here and waits for fine-tuning.
        if (name != "head.classifier") params.push_back(tensor);
    }
    AdamW optimizer(params, config);

    const std::vector<double> uniform(weights.config.vocab_size, 1.0);
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);

    TrainingLog log;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        Rng shuffle_rng(Rng::derive(config.seed, {1, epoch}));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t steps = 0;
        std::size_t correct = 0;
        std::size_t positions = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            Tensor batch_total;
            for (std::size_t k = begin; k < end; ++k) {
                const std::vector<int>& ids = docs[order[k]];
                Tensor logits = forward_lm(weights, ids);
                Tensor predictions = row_slice(logits, 0, ids.size() - 1);
                std::vector<int> targets(ids.begin() + 1, ids.end());
                Tensor doc_loss = weighted_cross_entropy(predictions, targets, uniform);
                batch_total = batch_total.defined() ? add(batch_total, doc_loss) : doc_loss;

                const std::vector<double>& raw = logits.values();
                for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
                    const std::size_t predicted =
                        argmax(raw, t * weights.config.vocab_size, weights.config.vocab_size);
                    correct += (predicted == static_cast<std::size_t>(ids[t + 1])) ? 1 : 0;
                    ++positions;
                }
            }
            Tensor batch_loss = scale(batch_total, 1.0 / static_cast<double>(end - begin));
            backward(batch_loss);
            optimizer.step();
            optimizer.zero_grad();
            log.step_losses.push_back(batch_loss.value());
            loss_sum += batch_loss.value();
            ++steps;
        }
        EpochRecord record;
        record.epoch = epoch;
        record.loss = loss_sum / static_cast<double>(steps);
        record.accuracy =
            positions == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(positions);
        record.seconds = seconds_since(start);
        log.epochs.push_back(record);
    }
    return log;
}

TrainingLog finetune_classifier(AdaptedModel& model, const BpeVocab& vocab,
                                const std::vector<LabeledExample>& examples,
                                const TrainingConfig& config) {
    config.validate();
    model.base.config.validate();
    if (!model.base.lora_injected) {
        throw ContractError("finetune: inject adapters before fine-tuning");
    }
    if (examples.empty()) throw DataError("training set is empty");
    const std::size_t n_classes = model.base.config.n_classes;
    if (model.base.config.vocab_size < vocab.size()) {
        throw ConfigError("model vocab_size " + std::to_string(model.base.config.vocab_size) +
                          " is smaller than the tokenizer vocabulary " +
                          std::to_string(vocab.size()));
    }

    std::vector<double> class_weights = config.class_weights;
    if (class_weights.empty()) class_weights.assign(n_classes, 1.0);
    if (class_weights.size() != n_classes) {
        throw ConfigError("training config: " + std::to_string(class_weights.size()) +
                          " class weights for a " + std::to_string(n_classes) + "-class model");
    }

    std::vector<std::vector<int>> encoded;
    std::vector<int> labels;
    encoded.reserve(examples.size());
    labels.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const LabeledExample& example = examples[i];
        if (example.label < 0 || static_cast<std::size_t>(example.label) >= n_classes) {
            throw DataError("example " + std::to_string(i) + ": label " +
                            std::to_string(example.label) + " is outside [0, " +
                            std::to_string(n_classes) + ")");
        }
        std::vector<int> ids = truncate_ids(encode(vocab, example.text),
                                            model.base.config.max_seq_len,
                                            config.truncate_keep_tail);
        if (ids.empty()) ids.push_back(vocab.pad_id());  // empty text still forwards
        encoded.push_back(std::move(ids));
        labels.push_back(example.label);
    }

    std::vector<Tensor> params = {model.base.classifier_head};
    for (LoraAdapter& adapter : model.adapters) {
        params.push_back(adapter.w_a);
        params.push_back(adapter.w_b);
    }
    AdamW optimizer(params, config);

    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);

    TrainingLog log;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        Rng shuffle_rng(Rng::derive(config.seed, {2, epoch}));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t steps = 0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            Rng dropout_rng(Rng::derive(config.seed, {3, epoch, steps}));
            std::vector<Tensor> rows;
            std::vector<int> targets;
            rows.reserve(end - begin);
            targets.reserve(end - begin);
            for (std::size_t k = begin; k < end; ++k) {
                Tensor logits =
                    model.classifier_logits(encoded[order[k]], /*training=*/true, &dropout_rng);
                const std::size_t predicted = argmax(logits.values(), 0, n_classes);
                correct += (predicted == static_cast<std::size_t>(labels[order[k]])) ? 1 : 0;
                rows.push_back(std::move(logits));
                targets.push_back(labels[order[k]]);
            }
            Tensor loss = weighted_cross_entropy(concat_rows(rows), targets, class_weights);
            backward(loss);
            optimizer.step();
            optimizer.zero_grad();
            log.step_losses.push_back(loss.value());
            loss_sum += loss.value();
            ++steps;
        }
        EpochRecord record;
        record.epoch = epoch;
        record.loss = loss_sum / static_cast<double>(steps);
        record.accuracy = static_cast<double>(correct) / static_cast<double>(encoded.size());
        record.seconds = seconds_since(start);
        log.epochs.push_back(record);
    }
    return log;
}

}  // namespace lorakit
