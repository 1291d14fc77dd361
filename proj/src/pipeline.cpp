#include "lorakit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "lorakit/bpe.hpp"
#include "lorakit/corpus.hpp"
#include "lorakit/errors.hpp"
#include "lorakit/metrics.hpp"
#include "lorakit/serialize.hpp"

namespace lorakit::pipeline {

namespace {

using nlohmann::json;

json to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},       {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
            {"n_classes", c.n_classes},   {"rope_theta", c.rope_theta}, {"rmsnorm_eps", c.rmsnorm_eps}};
}

json to_json(const LoraConfig& c) {
    return {{"rank", c.rank},
            {"alpha", c.alpha},
            {"dropout_p", c.dropout_p},
            {"target_roles", c.target_roles},
            {"init_std", c.init_std}};
}

json to_json(const TrainingConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"adam_eps", c.adam_eps},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"weight_decay", c.weight_decay},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"class_weights", c.class_weights},
            {"seed", c.seed},
            {"truncate_keep_tail", c.truncate_keep_tail}};
}

void require_input(const std::filesystem::path& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string(what) + " is required");
    if (!std::filesystem::exists(path)) {
        throw DataError(std::string(what) + " not found: " + path.string());
    }
}

std::filesystem::path ensure_out_dir(const std::filesystem::path& dir) {
    if (dir.empty()) throw ConfigError("an output directory is required");
    std::filesystem::create_directories(dir);
    return dir;
}

std::string fmt(const char* format, double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, format, value);
    return buffer;
}

void print_stats(const DatasetStats& stats, std::ostream& out) {
    out << "examples        " << stats.total << "\n";
    out << "positives       " << stats.positives << "\n";
    out << "negatives       " << stats.negatives << "\n";
    out << "min length      " << stats.min_len << "\n";
    out << "max length      " << stats.max_len << "\n";
    if (stats.imbalance_pct) {
        out << "imbalance pct   " << fmt("%.2f", *stats.imbalance_pct) << "\n";
    } else {
        out << "imbalance pct   absent (no negative examples)\n";
    }
}

std::string stats_records(const DatasetStats& stats) {
    std::string text;
    text += "total\t" + std::to_string(stats.total) + "\n";
    text += "positives\t" + std::to_string(stats.positives) + "\n";
    text += "negatives\t" + std::to_string(stats.negatives) + "\n";
    text += "min_len\t" + std::to_string(stats.min_len) + "\n";
    text += "max_len\t" + std::to_string(stats.max_len) + "\n";
    text += "imbalance_pct\t";
    text += stats.imbalance_pct ? fmt("%.17g", *stats.imbalance_pct) : "absent";
    text += "\n";
    return text;
}

void print_epochs(const TrainingLog& log, std::ostream& out) {
    for (const EpochRecord& r : log.epochs) {
        out << "epoch " << r.epoch << ": loss " << fmt("%.6f", r.loss) << "  accuracy "
            << fmt("%.4f", r.accuracy) << "  (" << fmt("%.2f", r.seconds) << " s)\n";
    }
}

void require_vocab_match(const BpeVocab& vocab, const ModelConfig& config) {
    if (config.vocab_size != vocab.size()) {
        throw ConfigError("tokenizer vocabulary has " + std::to_string(vocab.size()) +
                          " ids but the model was built for vocab_size " +
                          std::to_string(config.vocab_size));
    }
}

// A checkpoint evaluated as-is, or with adapters attached in evaluation mode.
struct LoadedModel {
    TransformerWeights weights;
    std::optional<AdaptedModel> adapted;

    const ModelConfig& config() const {
        return adapted ? adapted->base.config : weights.config;
    }
    Tensor class_logits(std::span<const int> ids) const {
        return adapted ? adapted->classifier_logits(ids) : forward_classifier(weights, ids);
    }
};

LoadedModel load_model(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& adapters) {
    require_input(checkpoint, "model checkpoint");
    TransformerWeights weights = load_checkpoint(checkpoint);
    LoadedModel model;
    if (!adapters.empty()) {
        require_input(adapters, "adapter file");
        model.adapted = load_adapters(adapters, std::move(weights));
    } else {
        model.weights = std::move(weights);
    }
    return model;
}

std::vector<int> encode_for_model(const BpeVocab& vocab, const ModelConfig& config,
                                  const std::string& text, bool keep_tail) {
    std::vector<int> ids = truncate_ids(encode(vocab, text), config.max_seq_len, keep_tail);
    if (ids.empty()) ids.push_back(vocab.pad_id());
    return ids;
}

std::size_t argmax_of(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

std::vector<std::string> dataset_texts(const std::vector<LabeledExample>& examples) {
    std::vector<std::string> texts;
    texts.reserve(examples.size());
    for (const LabeledExample& example : examples) texts.push_back(example.text);
    return texts;
}

}  // namespace

json build_manifest(const std::string& command, const json& config,
                    const std::vector<std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs) {
    json manifest;
    manifest["tool"] = "lorakit";
    manifest["manifest_version"] = 1;
    manifest["command"] = command;
    manifest["config"] = config;
    json input_list = json::array();
    for (const auto& path : inputs) {
        input_list.push_back(
            {{"path", path.string()}, {"fnv1a64", fnv1a64_hex(fnv1a64_file(path))}});
    }
    manifest["inputs"] = input_list;
    json output_list = json::array();
    for (const auto& path : outputs) {
        // Only the file name: re-running into another directory is the same run.
        output_list.push_back(
            {{"file", path.filename().string()}, {"fnv1a64", fnv1a64_hex(fnv1a64_file(path))}});
    }
    manifest["outputs"] = output_list;
    return manifest;
}

void write_manifest(const std::filesystem::path& path, const json& manifest) {
    write_text_file(path, manifest.dump(2) + "\n");
}

std::vector<std::string> read_document_lines(const std::filesystem::path& path) {
    require_input(path, "document file");
    const std::string raw = read_text_file(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= raw.size()) {
        std::size_t end = raw.find('\n', start);
        if (end == std::string::npos) end = raw.size();
        std::string line = raw.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(std::move(line));
        if (end == raw.size()) break;
        start = end + 1;
    }
    return lines;
}

void run_preprocess(const PreprocessOptions& options, std::ostream& out) {
    const int families = static_cast<int>(!options.pan12_xml.empty()) +
                         static_cast<int>(!options.table.empty()) +
                         static_cast<int>(!options.dataset.empty());
    if (families != 1) {
        throw ConfigError(
            "preprocess needs exactly one input: chat-log XML, a delimited table, or a dataset");
    }
    if (options.split_fraction && !(*options.split_fraction > 0.0 && *options.split_fraction < 1.0)) {
        throw ConfigError("split fraction must lie strictly between 0 and 1");
    }

    std::vector<std::filesystem::path> inputs;
    std::vector<LabeledExample> examples;
    json config;
    config["seed"] = options.seed;
    if (options.split_fraction) config["split_fraction"] = *options.split_fraction;

    if (!options.pan12_xml.empty()) {
        require_input(options.pan12_xml, "chat-log XML");
        require_input(options.predator_ids, "predator id list");
        inputs = {options.pan12_xml, options.predator_ids};
        config["pan12_xml"] = options.pan12_xml.string();
        config["predator_ids"] = options.predator_ids.string();

        std::vector<Conversation> conversations = parse_pan12_xml(options.pan12_xml);
        auto [kept, removed] = filter_conversations(conversations);
        std::set<std::string> predators = load_predator_ids(options.predator_ids);
        examples = label_conversations(kept, predators);
        out << "conversations parsed   " << conversations.size() << "\n";
        out << "removed (author rule)  " << removed.author_rule << "\n";
        out << "removed (length rule)  " << removed.length_rule << "\n";
        out << "conversations kept     " << kept.size() << "\n";
    } else if (!options.table.empty()) {
        require_input(options.table, "delimited table");
        if (options.text_column.empty() || options.label_column.empty() ||
            options.positive_label.empty()) {
            throw ConfigError(
                "a table input needs --text-column, --label-column, and --positive-label");
        }
        inputs = {options.table};
        config["table"] = options.table.string();
        config["text_column"] = options.text_column;
        config["label_column"] = options.label_column;
        config["positive_label"] = options.positive_label;
        if (options.negative_label) config["negative_label"] = *options.negative_label;
        config["delimiter"] = std::string(1, options.delimiter);
        examples = load_tabular(options.table, options.text_column, options.label_column,
                                options.positive_label, options.negative_label, options.delimiter);
    } else {
        require_input(options.dataset, "dataset");
        inputs = {options.dataset};
        config["dataset"] = options.dataset.string();
        examples = load_dataset(options.dataset);
    }

    print_stats(dataset_stats(examples), out);

    const auto out_dir = ensure_out_dir(options.out_dir);
    std::vector<std::filesystem::path> outputs;
    const auto dataset_path = out_dir / "dataset.tsv";
    save_dataset(dataset_path, examples);
    outputs.push_back(dataset_path);

    if (options.split_fraction) {
        auto [train, test] = split_dataset(examples, *options.split_fraction, options.seed);
        const auto train_path = out_dir / "train.tsv";
        const auto test_path = out_dir / "test.tsv";
        save_dataset(train_path, train);
        save_dataset(test_path, test);
        outputs.push_back(train_path);
        outputs.push_back(test_path);
        out << "split           " << train.size() << " train / " << test.size() << " test\n";
    }

    write_manifest(out_dir / "manifest.json",
                   build_manifest("preprocess", config, inputs, outputs));
}

void run_train_tokenizer(const TrainTokenizerOptions& options, std::ostream& out) {
    if (options.dataset.empty() == options.text.empty()) {
        throw ConfigError("train-tokenizer needs exactly one input: a dataset or raw documents");
    }
    std::vector<std::string> docs;
    std::filesystem::path input;
    if (!options.dataset.empty()) {
        require_input(options.dataset, "dataset");
        input = options.dataset;
        docs = dataset_texts(load_dataset(options.dataset));
    } else {
        input = options.text;
        docs = read_document_lines(options.text);
    }

    BpeVocab vocab = train_bpe(docs, options.vocab_size, options.seed);
    const auto out_dir = ensure_out_dir(options.out_dir);
    const auto vocab_path = out_dir / "vocab.txt";
    save_vocab(vocab_path, vocab);
    out << "documents       " << docs.size() << "\n";
    out << "vocabulary      " << vocab.size() << " ids (" << vocab.merges.size()
        << " merges, pad id " << vocab.pad_id() << ")\n";

    json config = {{"vocab_size", options.vocab_size}, {"seed", options.seed}};
    write_manifest(out_dir / "manifest.json",
                   build_manifest("train-tokenizer", config, {input}, {vocab_path}));
}

void run_pretrain(const PretrainOptions& options, std::ostream& out) {
    require_input(options.vocab, "tokenizer vocabulary");
    if (options.dataset.empty() == options.text.empty()) {
        throw ConfigError("pretrain needs exactly one input: a dataset or raw documents");
    }
    BpeVocab vocab = load_vocab(options.vocab);
    std::vector<std::string> docs;
    std::filesystem::path input;
    if (!options.dataset.empty()) {
        require_input(options.dataset, "dataset");
        input = options.dataset;
        docs = dataset_texts(load_dataset(options.dataset));
    } else {
        input = options.text;
        docs = read_document_lines(options.text);
    }

    ModelConfig model_config = options.model;
    model_config.vocab_size = vocab.size();
    model_config.validate();

    TransformerWeights weights = init_weights(model_config, options.training.seed);
    TrainingLog log = pretrain_lm(weights, vocab, docs, options.training);
    print_epochs(log, out);

    const auto out_dir = ensure_out_dir(options.out_dir);
    const auto checkpoint_path = out_dir / "model.bin";
    const auto log_path = out_dir / "pretrain-log.tsv";
    save_checkpoint(checkpoint_path, weights);
    save_training_log(log_path, log);
    out << "checkpoint      " << checkpoint_path.string() << "\n";

    // The log carries wall-clock timings, so it is diagnostic rather than a
    // reproducible artifact; the manifest digests only the dataflow outputs.
    json config = {{"model", to_json(model_config)}, {"training", to_json(options.training)}};
    write_manifest(out_dir / "manifest.json",
                   build_manifest("pretrain", config, {options.vocab, input},
                                  {checkpoint_path}));
}

void run_finetune(const FinetuneOptions& options, std::ostream& out) {
    require_input(options.vocab, "tokenizer vocabulary");
    require_input(options.checkpoint, "model checkpoint");
    require_input(options.dataset, "training dataset");

    BpeVocab vocab = load_vocab(options.vocab);
    TransformerWeights weights = load_checkpoint(options.checkpoint);
    require_vocab_match(vocab, weights.config);
    std::vector<LabeledExample> examples = load_dataset(options.dataset);

    AdaptedModel model = inject(std::move(weights), options.lora, options.training.seed);
    auto [total, trainable] = model.count_params();
    out << "parameters      " << trainable << " trainable of " << total << " total ("
        << fmt("%.4f", 100.0 * static_cast<double>(trainable) / static_cast<double>(total))
        << "%)\n";

    TrainingLog log = finetune_classifier(model, vocab, examples, options.training);
    print_epochs(log, out);

    const auto out_dir = ensure_out_dir(options.out_dir);
    const auto adapters_path = out_dir / "adapters.bin";
    const auto log_path = out_dir / "finetune-log.tsv";
    save_adapters(adapters_path, model);
    save_training_log(log_path, log);
    out << "adapters        " << adapters_path.string() << "\n";

    // As in pretraining, the timing-bearing log stays out of the manifest.
    json config = {{"lora", to_json(options.lora)}, {"training", to_json(options.training)}};
    write_manifest(out_dir / "manifest.json",
                   build_manifest("finetune", config,
                                  {options.vocab, options.checkpoint, options.dataset},
                                  {adapters_path}));
}

void run_merge(const MergeOptions& options, std::ostream& out) {
    require_input(options.checkpoint, "model checkpoint");
    require_input(options.adapters, "adapter file");

    TransformerWeights weights = load_checkpoint(options.checkpoint);
    AdaptedModel model = load_adapters(options.adapters, std::move(weights));
    const std::size_t n_adapters = model.adapters.size();
    model.merge_into_base();

    const auto out_dir = ensure_out_dir(options.out_dir);
    const auto merged_path = out_dir / "model-merged.bin";
    save_checkpoint(merged_path, model.base);
    out << "merged          " << n_adapters << " adapters into " << merged_path.string() << "\n";

    write_manifest(out_dir / "manifest.json",
                   build_manifest("merge", json::object(),
                                  {options.checkpoint, options.adapters}, {merged_path}));
}

void run_evaluate(const EvaluateOptions& options, std::ostream& out) {
    require_input(options.vocab, "tokenizer vocabulary");
    require_input(options.dataset, "evaluation dataset");
    BpeVocab vocab = load_vocab(options.vocab);
    LoadedModel model = load_model(options.checkpoint, options.adapters);
    require_vocab_match(vocab, model.config());
    if (model.config().n_classes != 2) {
        throw ConfigError("evaluation metrics are binary; the model has " +
                          std::to_string(model.config().n_classes) + " classes");
    }

    std::vector<LabeledExample> examples = load_dataset(options.dataset);
    if (examples.empty()) throw DataError("evaluation dataset is empty");

    std::vector<int> predictions;
    std::vector<int> labels;
    predictions.reserve(examples.size());
    labels.reserve(examples.size());
    {
        autograd::NoGradGuard guard;  // inference only
        for (const LabeledExample& example : examples) {
            const std::vector<int> ids = encode_for_model(vocab, model.config(), example.text,
                                                          options.truncate_keep_tail);
            Tensor logits = model.class_logits(ids);
            predictions.push_back(static_cast<int>(argmax_of(logits.values())));
            labels.push_back(example.label);
        }
    }

    ConfusionMatrix cm = confusion(predictions, labels);
    MetricsReport metrics = report(cm);
    out << render_metrics_table(cm, metrics);

    const auto out_dir = ensure_out_dir(options.out_dir);
    const auto metrics_path = out_dir / "metrics.tsv";
    write_text_file(metrics_path, render_metrics_records(cm, metrics));

    std::vector<std::filesystem::path> inputs = {options.vocab, options.checkpoint};
    if (!options.adapters.empty()) inputs.push_back(options.adapters);
    inputs.push_back(options.dataset);
    json config = {{"truncate_keep_tail", options.truncate_keep_tail}};
    write_manifest(out_dir / "manifest.json",
                   build_manifest("evaluate", config, inputs, {metrics_path}));
}

void run_predict(const PredictOptions& options, std::ostream& out) {
    require_input(options.vocab, "tokenizer vocabulary");
    BpeVocab vocab = load_vocab(options.vocab);
    LoadedModel model = load_model(options.checkpoint, options.adapters);
    require_vocab_match(vocab, model.config());

    std::vector<std::string> texts = read_document_lines(options.input);
    if (texts.empty()) throw DataError("no input texts to classify");

    std::string rendered;
    {
        autograd::NoGradGuard guard;
        for (const std::string& text : texts) {
            const std::vector<int> ids =
                encode_for_model(vocab, model.config(), text, options.truncate_keep_tail);
            Tensor logits = model.class_logits(ids);
            const std::vector<double>& raw = logits.values();
            // softmax over the class logits
            double mx = raw[0];
            for (double v : raw) mx = std::max(mx, v);
            double denom = 0.0;
            for (double v : raw) denom += std::exp(v - mx);
            std::string line = std::to_string(argmax_of(raw));
            for (double v : raw) line += "\t" + fmt("%.6f", std::exp(v - mx) / denom);
            rendered += line + "\n";
        }
    }
    out << rendered;

    if (!options.out_dir.empty()) {
        const auto out_dir = ensure_out_dir(options.out_dir);
        const auto predictions_path = out_dir / "predictions.tsv";
        write_text_file(predictions_path, rendered);
        json config = {{"truncate_keep_tail", options.truncate_keep_tail}};
        std::vector<std::filesystem::path> inputs = {options.vocab, options.checkpoint};
        if (!options.adapters.empty()) inputs.push_back(options.adapters);
        inputs.push_back(options.input);
        write_manifest(out_dir / "manifest.json",
                       build_manifest("predict", config, inputs, {predictions_path}));
    }
}

void run_stats(const StatsOptions& options, std::ostream& out) {
    if (options.dataset.empty() == options.table.empty()) {
        throw ConfigError("stats needs exactly one input: a dataset or a delimited table");
    }
    std::vector<LabeledExample> examples;
    std::filesystem::path input;
    json config;
    if (!options.dataset.empty()) {
        require_input(options.dataset, "dataset");
        input = options.dataset;
        config["dataset"] = options.dataset.string();
        examples = load_dataset(options.dataset);
    } else {
        require_input(options.table, "delimited table");
        if (options.text_column.empty() || options.label_column.empty() ||
            options.positive_label.empty()) {
            throw ConfigError(
                "a table input needs --text-column, --label-column, and --positive-label");
        }
        input = options.table;
        config["table"] = options.table.string();
        config["text_column"] = options.text_column;
        config["label_column"] = options.label_column;
        config["positive_label"] = options.positive_label;
        if (options.negative_label) config["negative_label"] = *options.negative_label;
        config["delimiter"] = std::string(1, options.delimiter);
        examples = load_tabular(options.table, options.text_column, options.label_column,
                                options.positive_label, options.negative_label, options.delimiter);
    }

    const DatasetStats stats = dataset_stats(examples);
    print_stats(stats, out);

    if (!options.out_dir.empty()) {
        const auto out_dir = ensure_out_dir(options.out_dir);
        const auto stats_path = out_dir / "stats.tsv";
        write_text_file(stats_path, stats_records(stats));
        write_manifest(out_dir / "manifest.json",
                       build_manifest("stats", config, {input}, {stats_path}));
    }
}

}  // namespace lorakit::pipeline
