"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

Run just these with ``pytest tests/test_acceptance.py -v -s``.
"""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from methodtagger import crf
from methodtagger.cli import main as cli_main
from methodtagger.corpus import (LabeledSentence, build_corpus, chronological_split, read_dataset,
                                 read_papers)
from methodtagger.crf import TransitionMatrix, crf_nll, structural_mask
from methodtagger.evaluate import evaluate_sentences, f_score, span_prf, Span
from methodtagger.factored import partition, routing_groups, train_dfg, train_tagger
from methodtagger.labels import (CATEGORIES, LabelScheme, expand_labels, is_valid_bio,
                                 project_labels, repair_bio)
from methodtagger.chrono import FeedbackConfig, run_protocol
from methodtagger.synthetic import (DRIFT_FEEDBACK, DRIFT_MODEL, DRIFT_TRAIN, drift_stream,
                                    separable_corpus)
from methodtagger.training import ModelSpec, TrainConfig, build_model, make_examples

from oracles import brute_force, central_difference, gradient_error, read_expected

FIXTURES = Path(__file__).parent / "fixtures"


def random_bio(rng, n):
    out = []
    for i in range(n):
        r = rng.random()
        if r < 0.5:
            out.append("O")
        elif r < 0.75 or i == 0 or out[-1] == "O":
            out.append("B")
        else:
            out.append("I")
    return out


# 1 ------------------------------------------------------------------------

def test_criterion_01_exact_inference(record_criterion):
    rng = np.random.default_rng(2024)
    instances = []
    for _ in range(200):
        n, k = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        mask = structural_mask(k) & (rng.random((k + 2, k + 2)) >= 0.15)
        instances.append((rng.normal(size=(n, k)) * 2, TransitionMatrix(rng.normal(size=(k + 2, k + 2)), mask)))
    oracle = [brute_force(em, tm.scores, tm.mask) for em, tm in instances]

    previous, worst, elapsed, ok = crf.BACKEND, 0.0, {}, True
    try:
        for backend in crf.available_backends():
            crf.set_backend(backend)
            t0 = time.perf_counter()
            for (em, tm), (log_z, best_path, best) in zip(instances, oracle):
                if best_path is None:
                    ok &= crf.log_partition(em, tm) == -math.inf
                    with pytest.raises(crf.NoValidPath):
                        crf.viterbi(em, tm)
                    continue
                got = crf.log_partition(em, tm)
                path, score = crf.viterbi(em, tm)
                rel = max(abs(got - log_z) / max(abs(log_z), 1e-300),
                          abs(score - best) / max(abs(best), 1e-300))
                worst = max(worst, rel)
                ok &= path == best_path
            elapsed[backend] = time.perf_counter() - t0
    finally:
        crf.set_backend(previous)
    ok &= worst <= 1e-8 and all(t < 5 for t in elapsed.values())
    timing = ", ".join(f"{b} {t:.2f}s" for b, t in elapsed.items())
    record_criterion(1, ok, f"200 instances, max rel err {worst:.1e}, {timing}")
    assert worst <= 1e-8
    assert ok


# 2 ------------------------------------------------------------------------

def _tiny_sentences(rng, scheme):
    vocab = ["a", "b", "c", "d"]
    sents = []
    for i in range(3):
        n = int(rng.integers(1, 5))
        tokens = [vocab[j] for j in rng.integers(len(vocab), size=n)]
        cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        sents.append(LabeledSentence(tokens, random_bio(rng, n), cat, 2015, f"q{i}"))
    return sents


def test_criterion_02_gradients(record_criterion):
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    worst = {"emissions": 0.0, "transitions": 0.0, "window-linear": 0.0, "bilstm": 0.0}

    for _ in range(50):
        n, k = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        em = rng.normal(size=(n, k))
        tm = TransitionMatrix(rng.normal(size=(k + 2, k + 2)), structural_mask(k))
        gold = [int(y) for y in rng.integers(k, size=n)]
        _, d_em, d_tr = crf_nll(em, tm, gold)
        f = lambda: crf_nll(em, tm, gold)[0]
        worst["emissions"] = max(worst["emissions"], gradient_error(d_em, central_difference(f, em)))
        worst["transitions"] = max(worst["transitions"],
                                   gradient_error(d_tr, central_difference(f, tm.scores)))

    for scorer in ("window-linear", "bilstm"):
        for i in range(50):
            scheme = LabelScheme(["coarse", "fine-binary", "fine"][i % 3], collapse_o=bool(i % 2))
            sents = _tiny_sentences(rng, scheme)
            spec = ModelSpec(scorer=scorer, dim=3, hidden=2, radius=int(rng.integers(0, 3)))
            model = build_model(spec, scheme, sents, seed=i)
            tokens, gold, key = make_examples(model, sents[:1])[0]
            _, grads = model.nll_and_gradients(tokens, gold, key)
            for name, value in model.parameters().items():
                num = central_difference(lambda: model.loss(tokens, gold, key), value)
                group = name if name == "transitions" else scorer
                worst[group] = max(worst[group], gradient_error(grads[name], num))

    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record_criterion(2, ok, f"50 instances per family, max rel err: {detail}; {elapsed:.1f}s")
    assert ok


# 3 ------------------------------------------------------------------------

def test_criterion_03_f_score(record_criterion):
    f = f_score(0.623, 0.2099)
    # same ratios from raw counts: 623 of 1000 predictions correct, 623 of 2968 gold found
    gold = [Span(("p", i), 0, 1, "") for i in range(2968)]
    pred = gold[:623] + [Span(("x", i), 0, 1, "") for i in range(377)]
    counted = span_prf(pred, gold).overall
    ok = abs(f - 0.314) <= 0.0005 and abs(counted.f_score - 0.314) <= 0.0005
    record_criterion(3, ok, f"F(0.623, 0.2099) = {f:.4f}; from counts {counted.f_score:.4f}")
    assert ok


# 4 ------------------------------------------------------------------------

def test_criterion_04_expand_project_identity(record_criterion):
    rng = np.random.default_rng(4)
    sizes = {}
    ok = True
    for kind in ("fine", "fine-binary"):
        for collapse in (False, True):
            scheme = LabelScheme(kind, collapse_o=collapse)
            sizes[(kind, collapse)] = len(scheme)
            for _ in range(1000):
                seq = random_bio(rng, int(rng.integers(0, 30)))
                cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
                expanded = expand_labels(seq, cat, scheme)
                ok &= project_labels(expanded) == seq
                idx = scheme.encode(expanded)
                ok &= scheme.encode(scheme.decode(idx)) == idx
    # fine: 7 groups x {B, I, O} = 21, or 7 x {B, I} + O = 15
    # fine-binary: 2 groups x {B, I, O} = 6, or 2 x {B, I} + O = 5
    expected = {("fine", False): 21, ("fine-binary", False): 6, ("fine", True): 15,
                ("fine-binary", True): 5}
    ok &= sizes == expected
    record_criterion(4, ok, "identity on 4 x 1000 sequences; inventories fine 21/15, "
                            f"binary {sizes[('fine-binary', False)]}/{sizes[('fine-binary', True)]} "
                            "(collapsed binary is 2 x {B,I} + O = 5)")
    assert ok


# 5 ------------------------------------------------------------------------

def test_criterion_05_dfg_partitions(record_criterion):
    corpus = separable_corpus(120, seed=5)
    spec, config = ModelSpec(dim=4), TrainConfig(learning_rate=0.05, max_epochs=1)
    ok, detail = True, []
    for routing, n_groups in (("fine7", 7), ("binary", 2)):
        parts = partition(corpus.sentences, routing)
        ids = [id(s) for group in parts.values() for s in group]
        disjoint_exhaustive = (len(ids) == len(set(ids)) == len(corpus.sentences)
                               and set(parts) == set(routing_groups(routing)) and len(parts) == n_groups)
        ens = train_dfg(corpus, routing, spec, config)
        seen = True
        for group, sents in parts.items():
            if sents:
                vocab = set(ens.models[group].scorer.table.itos[1:])
                seen &= vocab == {t for s in sents for t in s.tokens}
        ok &= disjoint_exhaustive and seen and set(ens.models) == set(parts)
        detail.append(f"{routing}: {len(parts)} groups, sizes {sorted(len(v) for v in parts.values())}")
    record_criterion(5, ok, "; ".join(detail))
    assert ok


# 6 ------------------------------------------------------------------------

def test_criterion_06_separable_corpus(record_criterion):
    sents = read_dataset(FIXTURES / "toy200.tsv")
    assert len(sents) == 200
    spec = ModelSpec(scorer="window-linear", dim=32)
    config = TrainConfig(learning_rate=0.05, max_epochs=200, patience=10, dev_fraction=0.0)
    t0 = time.perf_counter()
    tagger = train_tagger("plain", sents, spec, config)
    elapsed = time.perf_counter() - t0
    f1 = evaluate_sentences(sents, [tagger.predict(s) for s in sents]).f_score
    ok = f1 >= 0.95 and elapsed < 120
    record_criterion(6, ok, f"train span F1 {f1:.4f} in {elapsed:.1f}s")
    assert ok


# 7 ------------------------------------------------------------------------

def test_criterion_07_feedback_ordering(record_criterion):
    t0 = time.perf_counter()
    spec, feedback = ModelSpec(**DRIFT_MODEL), FeedbackConfig(**DRIFT_FEEDBACK)
    ok, lines = True, []
    for seed in (0, 1, 2):
        ds = drift_stream(seed=seed)
        config = TrainConfig(**DRIFT_TRAIN, seed=seed)
        init = train_tagger("plain", ds.initial, spec, config)
        runs = {mode: run_protocol(ds.initial, ds.stream, mode, config, feedback, "plain", spec,
                                   ds.tag_index, ds.cutoff, initial_tagger=init)
                for mode in ("frozen", "silver", "gold")}
        years = sorted(ds.stream)
        for ey in years[1:]:     # the first stream year is scored by the shared initial model
            f = {m: runs[m].current(ey).f_score for m in runs}
            z = {m: runs[m].current(ey, "zero_shot").f_score for m in runs}
            good = (f["frozen"] <= f["silver"] + 0.02 and f["silver"] + 0.02 <= f["gold"] + 0.04
                    and z["silver"] - z["frozen"] >= 0.05)
            ok &= good
            lines.append(f"s{seed}/{ey} F {f['frozen']:.3f}/{f['silver']:.3f}/{f['gold']:.3f} "
                         f"zs gap {z['silver'] - z['frozen']:+.3f}{'' if good else ' !'}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    for line in lines:
        print("   ", line)
    worst_gap = min(float(l.split("zs gap ")[1].split()[0]) for l in lines)
    record_criterion(7, ok, f"3 seeds x {len(lines) // 3} eval years, "
                            f"smallest zero-shot gap {worst_gap:+.3f}; {elapsed:.1f}s")
    assert ok


# 8 ------------------------------------------------------------------------

FAST = ["--set", "learning_rate=0.05", "--set", "max_epochs=2", "--set", "dim=8"]


def _cli_session(root: Path):
    """Run every command once inside ``root``; return {relative path: bytes} of everything written."""
    cwd = os.getcwd()
    root.mkdir(parents=True)
    os.chdir(root)
    try:
        papers = str(FIXTURES / "papers30.jsonl")
        cmds = [
            ["synth", "separable", "toy.tsv", "--seed", "3", "--sentences", "60"],
            ["synth", "drift", "drift", "--seed", "1", "--sentences", "60"],
            ["build-corpus", papers, "corpus.tsv", "--negative-rate", "0.5", "--seed", "7"],
            ["split", "corpus.tsv", "--cutoff", "2017", "--train-out", "tr.tsv", "--test-out", "te.tsv"],
            ["split", "toy.tsv", "--ratio", "0.8", "--seed", "2", "--train-out", "a.tsv", "--test-out", "b.tsv"],
            ["train", "toy.tsv", "--out", "m-plain", "--kind", "plain", "--seed", "5", *FAST],
            ["train", "toy.tsv", "--out", "m-lfgb", "--kind", "lfgb", "--seed", "5", *FAST],
            ["train", "toy.tsv", "--out", "m-dfg", "--kind", "dfg", "--decoder", "softmax", *FAST],
            ["predict", "m-lfgb", "b.tsv", "pred.tsv"],
            ["evaluate", "b.tsv", "--predictions", "pred.tsv", "--out", "ev", "--per-category",
             "--compare", "b.tsv"],
            ["evaluate", "corpus.tsv", "--model", "m-plain", "--out", "ev2", "--zero-shot-cutoff", "2017",
             "--tag-index", "corpus.tsv.tags.json"],
            ["export-context", "toy.tsv", "ctx.csv", "--target", "baseline", "--window", "3"],
        ]
        for mode in ("frozen", "silver", "gold"):
            cmds.append(["feedback", "drift/train.tsv", "drift/stream", "--mode", mode, "--out", "fb",
                         "--kind", "plain", "--tag-index", "drift/tag_index.json", "--seed", "9",
                         "--set", "retrain_epochs=1", *FAST])
        codes = [cli_main(c) for c in cmds]
        files = {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
        return codes, [c[0] for c in cmds], files
    finally:
        os.chdir(cwd)


def test_criterion_08_cli_determinism(tmp_path, record_criterion):
    codes_a, names, a = _cli_session(tmp_path / "first")
    codes_b, _, b = _cli_session(tmp_path / "second")
    manifests = [k for k in a if "manifest" in Path(k).name]
    covered = {json.loads(a[k]).get("command") for k in manifests if "command" in json.loads(a[k])}
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = (codes_a == codes_b == [0] * len(codes_a) and not differing
          and covered == set(names))
    record_criterion(8, ok, f"{len(names)} command runs covering {len(covered)} commands; "
                            f"{len(manifests)} manifests and {len(a)} files byte-identical"
                     + (f"; differing: {differing[:5]}" if differing else ""))
    assert ok


# 9 ------------------------------------------------------------------------

def test_criterion_09_bio_mask_fuzz(record_criterion):
    rng = np.random.default_rng(9)
    schemes = [LabelScheme("coarse"), LabelScheme("fine"), LabelScheme("fine", True),
               LabelScheme("fine-binary"), LabelScheme("fine-binary", True)]
    vocab = [f"w{i}" for i in range(50)]
    seed_sents = [LabeledSentence(vocab[:5], ["O"] * 5, CATEGORIES[0], 2015, "v")]
    total = invalid = repaired = 0
    t0 = time.perf_counter()
    for m in range(50):
        scheme = schemes[m % len(schemes)]
        spec = ModelSpec(dim=4, radius=1, max_len=int(rng.choice([8, 256])))
        model = build_model(spec, scheme, seed_sents, seed=m)
        model.scorer.table.grow(vocab, rng)
        for name, value in model.parameters().items():
            value[...] = rng.normal(scale=3.0, size=value.shape)
        for _ in range(200):
            tokens = [vocab[j] for j in rng.integers(len(vocab), size=int(rng.integers(1, 40)))]
            labels = model.decode(tokens)
            coarse = project_labels(labels) if scheme.is_fine else labels
            total += 1
            invalid += not is_valid_bio(labels)
            repaired += repair_bio(coarse) != coarse
    elapsed = time.perf_counter() - t0
    ok = total == 10_000 and invalid == 0 and repaired == 0
    record_criterion(9, ok, f"{total} decodes over 50 random models: {invalid} invalid, "
                            f"{repaired} repaired; {elapsed:.1f}s")
    assert ok


# 10 -----------------------------------------------------------------------

def test_criterion_10_weak_labels_and_split(record_criterion):
    expected = read_expected(FIXTURES / "papers30.expected")
    corpus, stats = build_corpus(read_papers(FIXTURES / "papers30.jsonl"))
    got = [(s.paper_id, s.paper_year, s.tokens, s.labels) for s in corpus.sentences]
    labels_match = got == expected

    raw = [json.loads(l) for l in open(FIXTURES / "papers30.jsonl", encoding="utf-8") if l.strip()]
    max_year = {p["paper_id"]: max(t["first_year"] for t in p["tags"]) for p in raw if p["tags"]}
    train, test = chronological_split(corpus, 2017)
    split_ok = (all(max_year[s.paper_id] <= 2017 for s in train.sentences)
                and all(max_year[s.paper_id] > 2017 for s in test.sentences)
                and len(train.sentences) + len(test.sentences) == len(corpus.sentences)
                and {s.paper_id for s in corpus.sentences} == set(max_year))
    ok = labels_match and split_ok
    record_criterion(10, ok, f"{len(got)} sentences from {stats.papers_kept} papers match the hand "
                             f"annotation; 2017 split {len(train.sentences)}/{len(test.sentences)} "
                             "follows max tag year")
    assert ok
