from __future__ import annotations

import json

import pytest

from dualner.cli import main
from dualner.corpus import (
    load_corpus,
    load_predictions,
    save_corpus,
    strip_segmentation,
)
from dualner.subtok import BpeVocab


@pytest.fixture()
def corpus_file(tmp_path, small_corpus):
    path = tmp_path / "corpus.jsonl"
    save_corpus(small_corpus, path)
    return path


@pytest.fixture()
def vocab_file(tmp_path, small_vocab):
    path = tmp_path / "vocab.json"
    small_vocab.save(path)
    return path


def test_no_arguments_exits_one(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exits_one(capsys):
    assert main(["frobnicate"]) == 1


def test_help_everywhere(capsys):
    assert main(["--help"]) == 0
    for command in (
        "generate-synthetic", "segment", "build-vocab", "train", "pretrain-mlm",
        "sweep-tapt", "predict", "postprocess", "evaluate", "analyze-fragmentation",
    ):
        assert main([command, "--help"]) == 0, command
        out = capsys.readouterr().out
        assert "usage" in out


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["generate-synthetic", "--out", str(a), "--docs", "5", "--seed", "3"]) == 0
    assert main(["generate-synthetic", "--out", str(b), "--docs", "5", "--seed", "3"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_generate_rejects_bad_args(tmp_path, capsys):
    assert main(["generate-synthetic", "--out", str(tmp_path / "x"), "--docs", "0"]) == 1


def test_segment_roundtrip(tmp_path, small_corpus):
    raw = tmp_path / "raw.jsonl"
    seg = tmp_path / "seg.jsonl"
    save_corpus(strip_segmentation(small_corpus), raw)
    assert main(["segment", "--input", str(raw), "--output", str(seg)]) == 0
    docs = load_corpus(seg)
    assert [s.words for d in docs for s in d.sentences] == [
        s.words for d in small_corpus for s in d.sentences
    ]


def test_segment_idempotent_on_segmented_corpus(tmp_path, corpus_file):
    out = tmp_path / "seg.jsonl"
    assert main(["segment", "--input", str(corpus_file), "--output", str(out)]) == 0
    assert out.read_bytes() == corpus_file.read_bytes()


def test_build_vocab(tmp_path, corpus_file):
    out = tmp_path / "vocab.json"
    assert main(["build-vocab", "--corpus", str(corpus_file), "--out", str(out), "--vocab-size", "150"]) == 0
    vocab = BpeVocab.load(out)
    assert len(vocab) == 150


def test_build_vocab_too_small_exits_one(tmp_path, corpus_file):
    out = tmp_path / "vocab.json"
    assert main(["build-vocab", "--corpus", str(corpus_file), "--out", str(out), "--vocab-size", "5"]) == 1
    assert not out.exists()


def test_evaluate_gold_vs_itself(tmp_path, corpus_file, capsys):
    report_path = tmp_path / "report.json"
    code = main([
        "evaluate", "--gold", str(corpus_file), "--pred", str(corpus_file),
        "--mcc", "--out", str(report_path),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "1.0000" in out
    report = json.loads(report_path.read_text())
    assert report["overall"]["f1"] == 1.0
    assert report["overall"]["mcc"] == 1.0


def test_evaluate_malformed_pred_exits_two_and_writes_nothing(tmp_path, corpus_file):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{broken\n", encoding="utf-8")
    report_path = tmp_path / "report.json"
    code = main([
        "evaluate", "--gold", str(corpus_file), "--pred", str(bad), "--out", str(report_path),
    ])
    assert code == 2
    assert not report_path.exists()


def test_evaluate_mismatched_pred_exits_two(tmp_path, corpus_file, small_corpus):
    shorter = tmp_path / "short.jsonl"
    save_corpus(small_corpus[:3], shorter)
    assert main(["evaluate", "--gold", str(corpus_file), "--pred", str(shorter)]) == 2


def test_evaluate_by_subtokens(tmp_path, corpus_file, vocab_file, capsys):
    report_path = tmp_path / "report.json"
    code = main([
        "evaluate", "--gold", str(corpus_file), "--pred", str(corpus_file),
        "--by-subtokens", str(vocab_file), "--out", str(report_path),
    ])
    assert code == 0
    report = json.loads(report_path.read_text())
    grouped = report["overall"]["subtoken_grouped"]
    assert set(grouped) == {"1", "2", "3+"}
    occupied = [b for b in grouped.values() if b["word_count"]]
    assert occupied and all(b["f1"] == 1.0 for b in occupied)


def test_postprocess_cli(tmp_path, small_corpus):
    import dataclasses

    from dualner.corpus import ScoredMention

    doc = dataclasses.replace(
        small_corpus[0],
        sentences=[
            dataclasses.replace(
                small_corpus[0].sentences[0],
                mentions=[
                    ScoredMention(0, 4, "Facility", score=0.9),
                    ScoredMention(1, 2, "Facility", score=0.8),
                ],
            )
        ],
    )
    pred = tmp_path / "pred.jsonl"
    save_corpus([doc], pred)
    inner = tmp_path / "inner.jsonl"
    assert main(["postprocess", "--input", str(pred), "--strategy", "keep-inner", "--output", str(inner)]) == 0
    (got,) = load_predictions(inner)
    assert [(m.start_word, m.end_word) for m in got.sentences[0].mentions] == [(1, 2)]


def test_postprocess_requires_valid_strategy(tmp_path, corpus_file):
    assert main(["postprocess", "--input", str(corpus_file), "--strategy", "outer", "--output", str(tmp_path / "o.jsonl")]) == 1


def test_analyze_fragmentation(tmp_path, corpus_file, vocab_file, capsys):
    out = tmp_path / "frag.json"
    code = main([
        "analyze-fragmentation", "--corpus", str(corpus_file), "--vocab", str(vocab_file),
        "--scope", "mention_words", "--out", str(out),
    ])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["scope"] == "mention_words"
    assert report["ratio"] >= 1.0
    assert sum(report["histogram"].values()) == report["total_words"]
    assert "fragmentation ratio" in capsys.readouterr().out


def test_train_predict_evaluate_single_seed(tmp_path, corpus_file, capsys):
    config = {
        "corpus": str(corpus_file),
        "n_train": 16,
        "vocab_size": 170,
        "methods": ["word_tagger"],
        "seeds": [0],
        "encoder": {"hidden_dim": 32, "n_layers": 1, "n_heads": 2, "ffn_dim": 48},
        "heads": {"max_span_width": 8},
        "train": {"epochs": 2, "checkpoint_every": 8},
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out-dir", str(run_dir)]) == 0
    ckpt = run_dir / "word_tagger_seed0.npz"
    assert ckpt.exists()
    assert (run_dir / "word_tagger_seed0_log.jsonl").exists()
    assert (run_dir / "vocab.json").exists()

    pred = tmp_path / "pred.jsonl"
    code = main([
        "predict", "--corpus", str(corpus_file), "--vocab", str(run_dir / "vocab.json"),
        "--checkpoint", str(ckpt), "--out", str(pred),
    ])
    assert code == 0
    assert main(["evaluate", "--gold", str(corpus_file), "--pred", str(pred)]) == 0


def test_train_divergence_exits_three(tmp_path, corpus_file, capsys):
    import numpy as np

    config = {
        "corpus": str(corpus_file),
        "n_train": 16,
        "vocab_size": 170,
        "methods": ["word_tagger"],
        "seeds": [0],
        "encoder": {"hidden_dim": 32, "n_layers": 1, "n_heads": 2, "ffn_dim": 48},
        "train": {"epochs": 2, "learning_rate": 1e160, "grad_clip": 0.0, "warmup_frac": 0.0},
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    run_dir = tmp_path / "run"
    with np.errstate(all="ignore"):
        code = main(["train", "--config", str(cfg_path), "--out-dir", str(run_dir)])
    assert code == 3
    assert "training error" in capsys.readouterr().err
    assert not (run_dir / "word_tagger_seed0.npz").exists()


def test_train_missing_config_exits_one(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("DUALNER_CONFIG", raising=False)
    assert main(["train", "--out-dir", str(tmp_path / "run")]) == 1
    assert "--config" in capsys.readouterr().err


def test_config_env_var_fallback(tmp_path, corpus_file, monkeypatch):
    config = {
        "corpus": str(corpus_file),
        "n_train": 16,
        "vocab_size": 170,
        "methods": ["word_tagger"],
        "seeds": [0],
        "encoder": {"hidden_dim": 32, "n_layers": 1, "n_heads": 2, "ffn_dim": 48},
        "train": {"epochs": 1, "checkpoint_every": 8},
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    monkeypatch.setenv("DUALNER_CONFIG", str(cfg_path))
    assert main(["train", "--out-dir", str(tmp_path / "run")]) == 0
