// Python bindings for the core operations: tokenizer, dataset handling,
// model, adapters, training, and metrics. Wrappers stay thin; heavy lifting
// lives in the C++ library. Forward passes run with gradient recording off.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lorakit/bpe.hpp"
#include "lorakit/corpus.hpp"
#include "lorakit/lora.hpp"
#include "lorakit/metrics.hpp"
#include "lorakit/model.hpp"
#include "lorakit/tensor.hpp"
#include "lorakit/train.hpp"

namespace py = pybind11;
using namespace lorakit;

namespace {

std::vector<std::vector<double>> rows_of(const Tensor& t) {
    std::vector<std::vector<double>> rows;
    const auto& shape = t.shape();
    const std::size_t n_rows = shape.size() == 2 ? shape[0] : 1;
    const std::size_t n_cols = shape.size() == 2 ? shape[1] : t.numel();
    rows.reserve(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) {
        const auto begin = t.values().begin() + static_cast<std::ptrdiff_t>(r * n_cols);
        rows.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(n_cols));
    }
    return rows;
}

Tensor logits_tensor(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ContractError("logits must have at least one row");
    const std::size_t cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) throw ContractError("logit rows must have equal width");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor::from_data({rows.size(), cols}, std::move(flat));
}

// Owning wrapper so Python holds the weights with reference semantics.
struct PyModel {
    TransformerWeights weights;

    std::vector<double> classifier_logits(const std::vector<int>& ids) const {
        autograd::NoGradGuard guard;
        return forward_classifier(weights, ids).values();
    }
    std::vector<std::vector<double>> lm_logits(const std::vector<int>& ids) const {
        autograd::NoGradGuard guard;
        return rows_of(forward_lm(weights, ids));
    }
};

struct PyAdapted {
    AdaptedModel model;

    std::vector<double> classifier_logits(const std::vector<int>& ids) const {
        autograd::NoGradGuard guard;
        return model.classifier_logits(ids).values();
    }
};

py::object opt_to_py(const std::optional<double>& value) {
    if (value) return py::float_(*value);
    return py::none();
}

}  // namespace

PYBIND11_MODULE(_lorakit, m) {
    m.doc() = "low-rank adaptation toolkit: tokenizer, datasets, model, training, metrics";

    py::register_exception<Error>(m, "LorakitError", PyExc_RuntimeError);

    // ---- tokenizer ----
    py::class_<BpeVocab>(m, "Vocab")
        .def_property_readonly("size", &BpeVocab::size)
        .def_property_readonly("pad_id", &BpeVocab::pad_id)
        .def("encode",
             [](const BpeVocab& v, const std::string& text) { return encode(v, text); },
             py::arg("text"))
        .def("decode",
             [](const BpeVocab& v, const std::vector<int>& ids) {
                 return py::bytes(decode(v, ids));
             },
             py::arg("ids"), "Decoded bytes; may be arbitrary binary data.")
        .def("decode_text",
             [](const BpeVocab& v, const std::vector<int>& ids) { return decode(v, ids); },
             py::arg("ids"), "Decoded bytes interpreted as UTF-8 text.")
        .def("save", [](const BpeVocab& v, const std::filesystem::path& p) { save_vocab(p, v); },
             py::arg("path"))
        .def_static("load", &load_vocab, py::arg("path"));
    m.def("train_bpe", &train_bpe, py::arg("texts"), py::arg("vocab_size"), py::arg("seed") = 0);

    // ---- corpus ----
    py::class_<LabeledExample>(m, "LabeledExample")
        .def(py::init([](std::string text, int label) {
                 LabeledExample e;
                 e.text = std::move(text);
                 e.label = label;
                 return e;
             }),
             py::arg("text"), py::arg("label"))
        .def_readwrite("text", &LabeledExample::text)
        .def_readwrite("label", &LabeledExample::label)
        .def_readwrite("source_id", &LabeledExample::source_id)
        .def("__repr__", [](const LabeledExample& e) {
            return "LabeledExample(label=" + std::to_string(e.label) + ", text=" +
                   (e.text.size() > 32 ? e.text.substr(0, 29) + "..." : e.text) + ")";
        });

    m.def("load_tabular", &load_tabular, py::arg("path"), py::arg("text_column"),
          py::arg("label_column"), py::arg("positive_label"),
          py::arg("negative_label") = std::nullopt, py::arg("delimiter") = ',');
    m.def("load_dataset", &load_dataset, py::arg("path"));
    m.def("save_dataset", &save_dataset, py::arg("path"), py::arg("examples"));
    m.def("split_dataset", &split_dataset, py::arg("examples"), py::arg("train_fraction"),
          py::arg("seed"));
    m.def(
        "preprocess_chat_logs",
        [](const std::filesystem::path& xml, const std::filesystem::path& predators) {
            auto [kept, removed] = filter_conversations(parse_pan12_xml(xml));
            auto examples = label_conversations(kept, load_predator_ids(predators));
            py::dict removed_info;
            removed_info["author_rule"] = removed.author_rule;
            removed_info["length_rule"] = removed.length_rule;
            return py::make_tuple(examples, removed_info);
        },
        py::arg("xml"), py::arg("predator_ids"),
        "Parse, filter, and label a chat-log XML corpus; returns (examples, removed).");
    m.def("dataset_stats", [](const std::vector<LabeledExample>& examples) {
        const DatasetStats s = dataset_stats(examples);
        py::dict d;
        d["total"] = s.total;
        d["positives"] = s.positives;
        d["negatives"] = s.negatives;
        d["min_len"] = s.min_len;
        d["max_len"] = s.max_len;
        d["imbalance_pct"] = opt_to_py(s.imbalance_pct);
        return d;
    });

    // ---- model ----
    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init())
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("n_layers", &ModelConfig::n_layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("d_ff", &ModelConfig::d_ff)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("n_classes", &ModelConfig::n_classes)
        .def_readwrite("rope_theta", &ModelConfig::rope_theta)
        .def_readwrite("rmsnorm_eps", &ModelConfig::rmsnorm_eps)
        .def("validate", &ModelConfig::validate);

    py::class_<PyModel>(m, "Model")
        .def_property_readonly("config", [](const PyModel& m_) { return m_.weights.config; })
        .def("classifier_logits", &PyModel::classifier_logits, py::arg("ids"))
        .def("lm_logits", &PyModel::lm_logits, py::arg("ids"))
        .def("count_params",
             [](const PyModel& m_) {
                 auto [total, trainable] = count_params(m_.weights);
                 return py::make_tuple(total, trainable);
             })
        .def("save",
             [](const PyModel& m_, const std::filesystem::path& p) { save_checkpoint(p, m_.weights); },
             py::arg("path"))
        .def_static("load", [](const std::filesystem::path& p) {
            return PyModel{load_checkpoint(p)};
        }, py::arg("path"));
    m.def("init_model",
          [](const ModelConfig& config, std::uint64_t seed) {
              return PyModel{init_weights(config, seed)};
          },
          py::arg("config"), py::arg("seed") = 0);

    // ---- LoRA ----
    py::class_<LoraConfig>(m, "LoraConfig")
        .def(py::init())
        .def_readwrite("rank", &LoraConfig::rank)
        .def_readwrite("alpha", &LoraConfig::alpha)
        .def_readwrite("dropout_p", &LoraConfig::dropout_p)
        .def_readwrite("target_roles", &LoraConfig::target_roles)
        .def_readwrite("init_std", &LoraConfig::init_std)
        .def_property_readonly("scale", &LoraConfig::scale)
        .def("validate", &LoraConfig::validate);

    py::class_<PyAdapted>(m, "AdaptedModel")
        .def_property_readonly("config",
                               [](const PyAdapted& a) { return a.model.base.config; })
        .def("classifier_logits", &PyAdapted::classifier_logits, py::arg("ids"))
        .def("count_params",
             [](const PyAdapted& a) {
                 auto [total, trainable] = a.model.count_params();
                 return py::make_tuple(total, trainable);
             })
        .def("merge",
             [](PyAdapted& a) {
                 a.model.merge_into_base();
                 return PyModel{std::move(a.model.base)};
             },
             "Fold the adapters into the base weights and return the plain model. "
             "The adapted model must not be used afterwards.")
        .def("save_adapters",
             [](const PyAdapted& a, const std::filesystem::path& p) { save_adapters(p, a.model); },
             py::arg("path"));
    m.def(
        "inject",
        [](const PyModel& base, const LoraConfig& config, std::uint64_t seed) {
            // Tensor handles share storage, so the adapted model aliases the
            // base weights; the fine-tuning loop never mutates frozen values.
            return PyAdapted{inject(base.weights, config, seed)};
        },
        py::arg("model"), py::arg("config"), py::arg("seed") = 0);
    m.def("load_adapters",
          [](const std::filesystem::path& path, const PyModel& base) {
              return PyAdapted{load_adapters(path, base.weights)};
          },
          py::arg("path"), py::arg("base"));

    // ---- training ----
    py::class_<TrainingConfig>(m, "TrainingConfig")
        .def(py::init())
        .def_readwrite("learning_rate", &TrainingConfig::learning_rate)
        .def_readwrite("adam_eps", &TrainingConfig::adam_eps)
        .def_readwrite("adam_beta1", &TrainingConfig::adam_beta1)
        .def_readwrite("adam_beta2", &TrainingConfig::adam_beta2)
        .def_readwrite("weight_decay", &TrainingConfig::weight_decay)
        .def_readwrite("epochs", &TrainingConfig::epochs)
        .def_readwrite("batch_size", &TrainingConfig::batch_size)
        .def_readwrite("class_weights", &TrainingConfig::class_weights)
        .def_readwrite("seed", &TrainingConfig::seed)
        .def_readwrite("truncate_keep_tail", &TrainingConfig::truncate_keep_tail)
        .def("validate", &TrainingConfig::validate);

    py::class_<EpochRecord>(m, "EpochRecord")
        .def_readonly("epoch", &EpochRecord::epoch)
        .def_readonly("loss", &EpochRecord::loss)
        .def_readonly("accuracy", &EpochRecord::accuracy)
        .def_readonly("seconds", &EpochRecord::seconds)
        .def("__repr__", [](const EpochRecord& r) {
            return "EpochRecord(epoch=" + std::to_string(r.epoch) +
                   ", loss=" + std::to_string(r.loss) +
                   ", accuracy=" + std::to_string(r.accuracy) + ")";
        });

    py::class_<TrainingLog>(m, "TrainingLog")
        .def_readonly("epochs", &TrainingLog::epochs)
        .def_readonly("step_losses", &TrainingLog::step_losses)
        .def("save",
             [](const TrainingLog& log, const std::filesystem::path& p) {
                 save_training_log(p, log);
             },
             py::arg("path"));

    m.def(
        "pretrain",
        [](PyModel& model, const BpeVocab& vocab, const std::vector<std::string>& texts,
           const TrainingConfig& config) {
            return pretrain_lm(model.weights, vocab, texts, config);
        },
        py::arg("model"), py::arg("vocab"), py::arg("texts"), py::arg("config"),
        "Next-token training over raw texts; updates the model in place.");
    m.def(
        "finetune",
        [](PyAdapted& adapted, const BpeVocab& vocab,
           const std::vector<LabeledExample>& examples, const TrainingConfig& config) {
            return finetune_classifier(adapted.model, vocab, examples, config);
        },
        py::arg("model"), py::arg("vocab"), py::arg("examples"), py::arg("config"),
        "Classifier training through the adapters; updates the adapted model in place.");

    // ---- loss and metrics ----
    m.def(
        "weighted_cross_entropy",
        [](const std::vector<std::vector<double>>& logits, const std::vector<int>& targets,
           const std::vector<double>& weights) {
            autograd::NoGradGuard guard;
            return weighted_cross_entropy(logits_tensor(logits), targets, weights).value();
        },
        py::arg("logits"), py::arg("targets"), py::arg("weights"));

    py::class_<ConfusionMatrix>(m, "ConfusionMatrix")
        .def_readonly("tp", &ConfusionMatrix::tp)
        .def_readonly("tn", &ConfusionMatrix::tn)
        .def_readonly("fp", &ConfusionMatrix::fp)
        .def_readonly("fn", &ConfusionMatrix::fn)
        .def("total", &ConfusionMatrix::total)
        .def("__repr__", [](const ConfusionMatrix& c) {
            return "ConfusionMatrix(tp=" + std::to_string(c.tp) + ", tn=" + std::to_string(c.tn) +
                   ", fp=" + std::to_string(c.fp) + ", fn=" + std::to_string(c.fn) + ")";
        });
    m.def("confusion",
          [](const std::vector<int>& predictions, const std::vector<int>& labels) {
              return confusion(predictions, labels);
          },
          py::arg("predictions"), py::arg("labels"));
    m.def("f_beta", &f_beta, py::arg("precision"), py::arg("recall"), py::arg("beta"));
    m.def("report", [](const ConfusionMatrix& cm) {
        const MetricsReport r = report(cm);
        py::dict d;
        d["accuracy"] = opt_to_py(r.accuracy);
        d["tpr"] = opt_to_py(r.tpr);
        d["fpr"] = opt_to_py(r.fpr);
        d["precision"] = opt_to_py(r.precision);
        d["recall"] = opt_to_py(r.recall);
        d["f1"] = opt_to_py(r.f1);
        d["f05"] = opt_to_py(r.f05);
        return d;
    }, py::arg("cm"));
}
