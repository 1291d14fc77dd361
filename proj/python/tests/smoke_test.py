"""End-to-end smoke tests for the Python bindings.

Runnable directly (`python smoke_test.py`) or under pytest. Needs the
compiled package on PYTHONPATH and LORAKIT_FIXTURE_DIR pointing at the
repository fixtures.
"""

import math
import os
import tempfile
from pathlib import Path

import lorakit as lk

FIXTURES = Path(os.environ.get("LORAKIT_FIXTURE_DIR", "data/fixtures"))


def test_tokenizer_round_trip():
    vocab = lk.train_bpe(["hello world", "hello there"], vocab_size=270, seed=0)
    # 256 byte ids + pad, plus however many merges the tiny corpus supports.
    assert 257 <= vocab.size <= 270
    for text in ["hello world", "übergänge", "", "mixed 123 !?"]:
        ids = vocab.encode(text)
        assert vocab.decode_text(ids) == text
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "vocab.txt"
        vocab.save(path)
        again = lk.Vocab.load(path)
        assert again.encode("hello world") == vocab.encode("hello world")


def test_weighted_cross_entropy_matches_closed_form():
    # Two equally likely classes: the loss is ln 2 regardless of the weights.
    value = lk.weighted_cross_entropy([[0.0, 0.0]], targets=[1], weights=[3.0, 5.0])
    assert abs(value - math.log(2.0)) < 1e-12


def test_metrics_report():
    cm = lk.confusion(predictions=[1, 1, 0, 0, 1], labels=[1, 0, 0, 1, 1])
    assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 1, 1, 1)
    rep = lk.report(cm)
    assert abs(rep["accuracy"] - 3 / 5) < 1e-15
    assert abs(rep["f1"] - lk.f_beta(rep["precision"], rep["recall"], 1.0)) < 1e-15


def test_tabular_fixture_stats():
    examples = lk.load_tabular(
        FIXTURES / "roman_urdu_mini.csv",
        text_column="comment",
        label_column="label",
        positive_label="Abusive",
    )
    stats = lk.dataset_stats(examples)
    assert stats["total"] == len(examples) > 0
    assert stats["positives"] + stats["negatives"] == stats["total"]


def test_chat_log_preprocess():
    examples, removed = lk.preprocess_chat_logs(
        FIXTURES / "pan12_mini.xml", FIXTURES / "pan12_predators.txt"
    )
    assert len(examples) > 0
    assert removed["author_rule"] >= 0 and removed["length_rule"] >= 0
    assert {e.label for e in examples} <= {0, 1}


def test_adapter_training_loop():
    calm = ["what a lovely day", "thanks for the help", "see you tomorrow"]
    rude = ["you are a xx fool", "xx off right now", "you xx idiot"]
    examples = []
    for i in range(24):
        pool, label = (rude, 1) if i % 2 else (calm, 0)
        examples.append(lk.LabeledExample(pool[(i // 2) % len(pool)], label))

    vocab = lk.train_bpe([e.text for e in examples], vocab_size=300, seed=0)

    config = lk.ModelConfig()
    config.vocab_size = vocab.size
    config.d_model = 16
    config.n_layers = 1
    config.n_heads = 2
    config.d_ff = 32
    config.max_seq_len = 16
    config.n_classes = 2
    model = lk.init_model(config, seed=1)

    lora = lk.LoraConfig()
    lora.rank = 2
    lora.alpha = 4.0
    lora.dropout_p = 0.0
    adapted = lk.inject(model, lora, seed=2)
    total, trainable = adapted.count_params()
    assert 0 < trainable < total

    train_cfg = lk.TrainingConfig()
    train_cfg.learning_rate = 1e-2
    train_cfg.epochs = 4
    train_cfg.batch_size = 8
    train_cfg.seed = 3
    log = lk.finetune(adapted, vocab, examples, train_cfg)
    assert len(log.epochs) == 4
    assert log.epochs[-1].loss < log.epochs[0].loss

    ids = vocab.encode("you are a xx fool")
    adapted_logits = adapted.classifier_logits(ids)
    assert adapted_logits[1] > adapted_logits[0]

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "adapters.bin"
        adapted.save_adapters(path)
        base = lk.init_model(config, seed=1)
        restored = lk.load_adapters(path, base)
        got = restored.classifier_logits(ids)
        assert all(abs(a - b) < 1e-12 for a, b in zip(got, adapted_logits))

    merged = adapted.merge()
    merged_logits = merged.classifier_logits(ids)
    assert all(abs(a - b) < 1e-9 for a, b in zip(merged_logits, adapted_logits))


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} smoke tests passed")


if __name__ == "__main__":
    main()
