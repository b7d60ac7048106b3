import csv
import json
from pathlib import Path

import pytest

from methodtagger.cli import main
from methodtagger.corpus import read_dataset

FIXTURES = Path(__file__).parent / "fixtures"
FAST = ["--set", "learning_rate=0.05", "--set", "max_epochs=2", "--set", "dim=8"]


def test_build_corpus_three_papers(tmp_path, capsys):
    out = tmp_path / "d.tsv"
    assert main(["build-corpus", str(FIXTURES / "papers3.jsonl"), str(out)]) == 0
    sents = read_dataset(out)
    # p01 and p02 contribute two kept sentences each, p05 has no tags
    assert len(sents) == 4
    assert sum(s.labels.count("B") for s in sents) == 4
    printed = capsys.readouterr().out
    assert "dropped without tags 1" in printed
    assert json.loads((tmp_path / "d.tsv.manifest.json").read_text())["stats"]["dropped_no_tags"] == 1


def test_build_corpus_empty_and_missing(tmp_path):
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert main(["build-corpus", str(empty), str(tmp_path / "e.tsv")]) == 0
    assert (tmp_path / "e.tsv").read_text() == ""
    assert main(["build-corpus", str(tmp_path / "nope.jsonl"), str(tmp_path / "x.tsv")]) != 0


def test_unknown_config_key_rejected(tmp_path):
    toy = FIXTURES / "toy200.tsv"
    assert main(["train", str(toy), "--out", str(tmp_path / "m"), "--set", "layers=3"]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"learning_rate": 0.1, "bogus": 1}')
    assert main(["train", str(toy), "--out", str(tmp_path / "m"), "--config", str(cfg)]) == 2


@pytest.mark.parametrize("kind,decoder,files", [
    ("lfgb", "crf", ["model.npz"]),
    ("dfg", "crf", [f"model-{c}.npz" for c in ("AUDIO", "CV", "GEN", "GRAPH", "NLP", "RL", "SEQ")]),
    ("plain", "softmax", ["model.npz"]),
])
def test_train_kinds(tmp_path, kind, decoder, files):
    out = tmp_path / "m"
    assert main(["train", str(FIXTURES / "toy200.tsv"), "--out", str(out), "--kind", kind,
                 "--decoder", decoder, *FAST]) == 0
    assert sorted(p.name for p in out.glob("*.npz")) == sorted(files)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["spec"]["decoder"] == decoder
    if kind == "lfgb":
        assert manifest["scheme"]["kind"] == "fine-binary"
    assert json.loads((out / "config.json").read_text())["kind"] == kind


def test_evaluate_perfect_and_compare(tmp_path):
    toy = str(FIXTURES / "toy200.tsv")
    out = tmp_path / "ev"
    assert main(["evaluate", toy, "--predictions", toy, "--out", str(out), "--compare", toy,
                 "--per-category"]) == 0
    report = json.loads((out / "report.json").read_text())
    overall = report["all"]["overall"]
    assert overall["precision"] == overall["recall"] == overall["f_score"] == 1.0
    assert report["t_test"]["t"] == 0.0
    assert len(report["all"]["per_category"]) == 7


def test_evaluate_zero_shot_cutoff(tmp_path):
    data = tmp_path / "d.tsv"
    main(["build-corpus", str(FIXTURES / "papers30.jsonl"), str(data)])
    out = tmp_path / "ev"
    assert main(["evaluate", str(data), "--predictions", str(data), "--out", str(out),
                 "--zero-shot-cutoff", "2017", "--tag-index", str(data) + ".tags.json"]) == 0
    zs = json.loads((out / "report.json").read_text())["zero_shot"]["overall"]
    # spans whose tag first_year > 2017: BERT x2, GAT x2, GPT-2 x2, GPT, Transformer-XL,
    # Conformer, Vision Transformer, ViT, ELMo, SpecAugment, RoBERTa, SAC, TCN, GIN
    assert zs["n_gold"] == 17 and zs["f_score"] == 1.0


def test_evaluate_missing_file(tmp_path):
    assert main(["evaluate", str(tmp_path / "none.tsv"), "--predictions", "x", "--out", str(tmp_path)]) != 0


def test_predict_then_evaluate(tmp_path):
    toy = str(FIXTURES / "toy200.tsv")
    main(["train", toy, "--out", str(tmp_path / "m"), "--kind", "plain", *FAST])
    assert main(["predict", str(tmp_path / "m"), toy, str(tmp_path / "p.tsv")]) == 0
    assert len(read_dataset(tmp_path / "p.tsv")) == 200
    assert main(["evaluate", toy, "--model", str(tmp_path / "m"), "--out", str(tmp_path / "ev")]) == 0


def test_feedback_frozen_series_constant(tmp_path):
    main(["synth", "drift", str(tmp_path / "d")])
    out = tmp_path / "fb"
    assert main(["feedback", str(tmp_path / "d" / "train.tsv"), str(tmp_path / "d" / "stream"),
                 "--mode", "frozen", "--kind", "plain", "--out", str(out),
                 "--tag-index", str(tmp_path / "d" / "tag_index.json"), *FAST]) == 0
    rows = list(csv.DictReader((out / "series-frozen.csv").open()))
    assert {r["model_year"] for r in rows} == {"2017"}
    assert len(rows) == 8   # 4 eval years x (all, zero_shot)


def test_feedback_bad_stream_dir(tmp_path):
    assert main(["feedback", str(FIXTURES / "toy200.tsv"), str(tmp_path / "missing"),
                 "--mode", "gold", "--out", str(tmp_path / "o")]) != 0


def test_export_context(tmp_path):
    out = tmp_path / "ctx.csv"
    assert main(["export-context", str(FIXTURES / "toy200.tsv"), str(out), "--target", "baseline",
                 "--window", "2"]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "term,count" and len(rows) > 1


def test_split_commands(tmp_path):
    toy = str(FIXTURES / "toy200.tsv")
    assert main(["split", toy, "--ratio", "0.75", "--train-out", str(tmp_path / "a.tsv"),
                 "--test-out", str(tmp_path / "b.tsv")]) == 0
    assert len(read_dataset(tmp_path / "a.tsv")) == 150
    assert main(["split", toy, "--train-out", str(tmp_path / "a.tsv"),
                 "--test-out", str(tmp_path / "b.tsv")]) == 2
