"""Low-rank adaptation toolkit.

Thin Python surface over the C++ core: byte-level BPE, dataset handling,
a small decoder-only transformer, low-rank adapters, training loops, and
binary classification metrics.
"""

from ._lorakit import (
    AdaptedModel,
    ConfusionMatrix,
    EpochRecord,
    LabeledExample,
    LorakitError,
    LoraConfig,
    Model,
    ModelConfig,
    TrainingConfig,
    TrainingLog,
    Vocab,
    confusion,
    dataset_stats,
    f_beta,
    finetune,
    init_model,
    inject,
    load_adapters,
    load_dataset,
    load_tabular,
    pretrain,
    preprocess_chat_logs,
    report,
    save_dataset,
    split_dataset,
    train_bpe,
    weighted_cross_entropy,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptedModel",
    "ConfusionMatrix",
    "EpochRecord",
    "LabeledExample",
    "LorakitError",
    "LoraConfig",
    "Model",
    "ModelConfig",
    "TrainingConfig",
    "TrainingLog",
    "Vocab",
    "confusion",
    "dataset_stats",
    "f_beta",
    "finetune",
    "init_model",
    "inject",
    "load_adapters",
    "load_dataset",
    "load_tabular",
    "pretrain",
    "preprocess_chat_logs",
    "report",
    "save_dataset",
    "split_dataset",
    "train_bpe",
    "weighted_cross_entropy",
]
