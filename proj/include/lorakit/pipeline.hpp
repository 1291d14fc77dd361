#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorakit/lora.hpp"
#include "lorakit/model.hpp"
#include "lorakit/train.hpp"

namespace lorakit::pipeline {

// Every command writes a manifest next to its artifacts: the command name,
// the full effective configuration (seed included), and an FNV-1a digest of
// every input file. Reproducing a run from its manifest yields byte-identical
// outputs. No timestamps — manifests of identical runs are identical.
nlohmann::json build_manifest(const std::string& command, const nlohmann::json& config,
                              const std::vector<std::filesystem::path>& inputs,
                              const std::vector<std::filesystem::path>& outputs);
void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);

struct PreprocessOptions {
    // Exactly one input family: PAN12-style XML + predator ids, a delimited
    // table, or an existing dataset file (restats/resplit).
    std::filesystem::path pan12_xml;
    std::filesystem::path predator_ids;
    std::filesystem::path table;
    std::string text_column;
    std::string label_column;
    std::string positive_label;
    std::optional<std::string> negative_label;
    char delimiter = ',';
    std::filesystem::path dataset;

    std::optional<double> split_fraction;  // write train/test split when set
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
};
void run_preprocess(const PreprocessOptions& options, std::ostream& out);

struct TrainTokenizerOptions {
    std::filesystem::path dataset;  // texts of a labeled dataset ...
    std::filesystem::path text;     // ... or newline-delimited raw documents
    std::size_t vocab_size = 2048;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
};
void run_train_tokenizer(const TrainTokenizerOptions& options, std::ostream& out);

struct PretrainOptions {
    std::filesystem::path vocab;
    std::filesystem::path dataset;  // texts of a labeled dataset ...
    std::filesystem::path text;     // ... or newline-delimited raw documents
    ModelConfig model;              // vocab_size is taken from the tokenizer
    TrainingConfig training;
    std::filesystem::path out_dir;
};
void run_pretrain(const PretrainOptions& options, std::ostream& out);

struct FinetuneOptions {
    std::filesystem::path vocab;
    std::filesystem::path checkpoint;
    std::filesystem::path dataset;
    LoraConfig lora;
    TrainingConfig training;
    std::filesystem::path out_dir;
};
void run_finetune(const FinetuneOptions& options, std::ostream& out);

struct MergeOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path adapters;
    std::filesystem::path out_dir;
};
void run_merge(const MergeOptions& options, std::ostream& out);

struct EvaluateOptions {
    std::filesystem::path vocab;
    std::filesystem::path checkpoint;
    std::filesystem::path adapters;  // optional; evaluation-mode adapted forward
    std::filesystem::path dataset;
    bool truncate_keep_tail = true;
    std::filesystem::path out_dir;
};
void run_evaluate(const EvaluateOptions& options, std::ostream& out);

struct PredictOptions {
    std::filesystem::path vocab;
    std::filesystem::path checkpoint;
    std::filesystem::path adapters;  // optional
    std::filesystem::path input;     // newline-delimited texts
    bool truncate_keep_tail = true;
    std::filesystem::path out_dir;   // optional; also prints to `out`
};
void run_predict(const PredictOptions& options, std::ostream& out);

struct StatsOptions {
    std::filesystem::path dataset;  // dataset file ...
    std::filesystem::path table;    // ... or a delimited table
    std::string text_column;
    std::string label_column;
    std::string positive_label;
    std::optional<std::string> negative_label;
    char delimiter = ',';
    std::filesystem::path out_dir;  // optional; when set, also writes stats.tsv + manifest
};
void run_stats(const StatsOptions& options, std::ostream& out);

// Newline-delimited documents; CRLF tolerated, blank lines skipped.
std::vector<std::string> read_document_lines(const std::filesystem::path& path);

}  // namespace lorakit::pipeline
