"""Exact-match span scoring and the analyses built on it."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from scipy import stats as _stats

from .corpus import normalize_surface, normalize_token, tokenize
from .labels import split_label

logger = logging.getLogger(__name__)


class InvalidBio(ValueError):
    pass


class DegenerateVariance(ArithmeticError):
    pass


class Span(NamedTuple):
    sentence_ref: object
    start: int
    end: int  # exclusive
    surface: str

    @property
    def key(self):
        return (self.sentence_ref, self.start, self.end)


def extract_spans(labels: Sequence[str], tokens: Sequence[str] | None = None,
                  sentence_ref=None) -> list:
    """Maximal ``B I*`` runs as spans; raises :class:`InvalidBio` on malformed input."""
    spans = []
    start = None
    for i, lab in enumerate(labels):
        ind = split_label(lab)[0]
        if ind == "I":
            if start is None:
                raise InvalidBio(f"I without a preceding B at position {i}")
            continue
        if start is not None:
            spans.append((start, i))
            start = None
        if ind == "B":
            start = i
        elif ind != "O":
            raise InvalidBio(f"unknown label {lab!r}")
    if start is not None:
        spans.append((start, len(labels)))
    return [Span(sentence_ref, s, e, " ".join(tokens[s:e]) if tokens is not None else "")
            for s, e in spans]


def spans_to_labels(spans: Iterable[Span], n: int) -> list:
    labels = ["O"] * n
    for sp in spans:
        labels[sp.start] = "B"
        for j in range(sp.start + 1, sp.end):
            labels[j] = "I"
    return labels


def f_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class PRF:
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0

    @property
    def precision(self) -> float:
        return self.tp / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.n_gold if self.n_gold else 0.0

    @property
    def f_score(self) -> float:
        return f_score(self.precision, self.recall)

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.n_pred + other.n_pred, self.n_gold + other.n_gold)

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f_score": self.f_score,
                "tp": self.tp, "n_pred": self.n_pred, "n_gold": self.n_gold}


@dataclass
class EvalReport:
    overall: PRF
    per_category: dict = field(default_factory=dict)  # category -> PRF

    @property
    def precision(self) -> float:
        return self.overall.precision

    @property
    def recall(self) -> float:
        return self.overall.recall

    @property
    def f_score(self) -> float:
        return self.overall.f_score

    def as_dict(self) -> dict:
        return {"overall": self.overall.as_dict(),
                "per_category": {str(k): v.as_dict() for k, v in sorted(self.per_category.items(),
                                                                          key=lambda kv: str(kv[0]))}}

    def table(self) -> str:
        rows = [("overall", self.overall)] + [(str(k), v) for k, v in
                                              sorted(self.per_category.items(), key=lambda kv: str(kv[0]))]
        out = [f"{'group':<10} {'P':>7} {'R':>7} {'F':>7} {'tp':>6} {'pred':>6} {'gold':>6}"]
        for name, prf in rows:
            out.append(f"{name:<10} {prf.precision:7.4f} {prf.recall:7.4f} {prf.f_score:7.4f} "
                       f"{prf.tp:6d} {prf.n_pred:6d} {prf.n_gold:6d}")
        return "\n".join(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "precision", "recall", "f_score", "tp", "n_pred", "n_gold"])
        rows = [("overall", self.overall)] + sorted(((str(k), v) for k, v in self.per_category.items()))
        for name, prf in rows:
            w.writerow([name, f"{prf.precision:.6f}", f"{prf.recall:.6f}", f"{prf.f_score:.6f}",
                        prf.tp, prf.n_pred, prf.n_gold])
        return buf.getvalue()


def count_matches(predicted: Iterable[Span], gold: Iterable[Span]) -> PRF:
    pred_keys = {s.key for s in predicted}
    gold_keys = {s.key for s in gold}
    return PRF(len(pred_keys & gold_keys), len(pred_keys), len(gold_keys))


def span_prf(predicted: Iterable[Span], gold: Iterable[Span]) -> EvalReport:
    """Micro-averaged exact-match precision, recall and F."""
    return EvalReport(count_matches(predicted, gold))


def per_category_report(predicted: Iterable[Span], gold: Iterable[Span], categories: dict) -> EvalReport:
    """``categories`` maps sentence_ref -> category; overall counts are the per-group sums."""
    by_cat_pred = defaultdict(list)
    by_cat_gold = defaultdict(list)
    for sp in predicted:
        by_cat_pred[categories[sp.sentence_ref]].append(sp)
    for sp in gold:
        by_cat_gold[categories[sp.sentence_ref]].append(sp)
    per = {}
    for cat in set(categories.values()):
        per[cat] = count_matches(by_cat_pred[cat], by_cat_gold[cat])
    overall = sum(per.values(), PRF())
    return EvalReport(overall, per)


def sentence_spans(sentences, labels_of=lambda s: s.labels) -> list:
    """Spans of a list of LabeledSentence, referenced by sentence key."""
    out = []
    for sent in sentences:
        out.extend(extract_spans(labels_of(sent), sent.tokens, sent.key))
    return out


def evaluate_sentences(gold_sentences, predicted_labels: Sequence[Sequence[str]]) -> EvalReport:
    """Report with per-category breakdown for aligned gold sentences and predictions."""
    if len(gold_sentences) != len(predicted_labels):
        raise ValueError("prediction and gold sentence counts differ")
    gold, pred, cats = [], [], {}
    for sent, labels in zip(gold_sentences, predicted_labels):
        cats[sent.key] = str(sent.category)
        gold.extend(extract_spans(sent.labels, sent.tokens, sent.key))
        pred.extend(extract_spans(labels, sent.tokens, sent.key))
    return per_category_report(pred, gold, cats)


def zero_shot_filter(gold: Iterable[Span], tag_index: dict, cutoff: int):
    """Gold spans whose entity first appeared strictly after ``cutoff``.

    Returns ``(kept, unresolved)`` where ``unresolved`` counts spans whose
    surface is missing from the index (they are dropped).
    """
    kept = []
    unresolved = 0
    for sp in gold:
        year = tag_index.get(normalize_surface(sp.surface))
        if year is None:
            unresolved += 1
            continue
        if year > cutoff:
            kept.append(sp)
    if unresolved:
        logger.warning("zero-shot filter: %d gold spans not in the tag index", unresolved)
    return kept, unresolved


def zero_shot_report(gold_sentences, predicted_labels, tag_index: dict, cutoff: int) -> EvalReport:
    """Scores restricted to entities first seen after ``cutoff``.

    Gold spans go through :func:`zero_shot_filter`.  A predicted span is
    dropped when it hits a gold span that was filtered out or when its
    surface is a known pre-cutoff entity; all other predictions count.
    """
    gold_all, pred_all, cats = [], [], {}
    for sent, labels in zip(gold_sentences, predicted_labels):
        cats[sent.key] = str(sent.category)
        gold_all.extend(extract_spans(sent.labels, sent.tokens, sent.key))
        pred_all.extend(extract_spans(labels, sent.tokens, sent.key))
    kept, _ = zero_shot_filter(gold_all, tag_index, cutoff)
    kept_keys = {s.key for s in kept}
    dropped_keys = {s.key for s in gold_all} - kept_keys
    pred = []
    for sp in pred_all:
        if sp.key in dropped_keys:
            continue
        year = tag_index.get(normalize_surface(sp.surface))
        if sp.key not in kept_keys and year is not None and year <= cutoff:
            continue
        pred.append(sp)
    return per_category_report(pred, kept, cats)


def paired_t_test(scores_a: Sequence[float], scores_b: Sequence[float], alpha: float = 0.05):
    """Paired two-tailed t-test; returns ``(t, significant)``.

    Identical inputs give ``t = 0``; equal nonzero differences raise
    :class:`DegenerateVariance`.
    """
    if len(scores_a) != len(scores_b):
        raise ValueError("paired samples must have equal length")
    n = len(scores_a)
    if n < 2:
        raise ValueError("need at least two pairs")
    diffs = [a - b for a, b in zip(scores_a, scores_b)]
    if all(d == 0 for d in diffs):
        return 0.0, False
    mean = sum(diffs) / n
    var = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0 or all(d == diffs[0] for d in diffs):
        raise DegenerateVariance("all paired differences are equal")
    t = mean / math.sqrt(var / n)
    p = 2.0 * _stats.t.sf(abs(t), df=n - 1)
    return t, bool(p < alpha)


def per_paper_f(gold_sentences, predicted_labels) -> dict:
    """Span F per paper_id (the pairing unit for the t-test)."""
    counts: dict = defaultdict(PRF)
    for sent, labels in zip(gold_sentences, predicted_labels):
        g = extract_spans(sent.labels, sent.tokens, sent.key)
        p = extract_spans(labels, sent.tokens, sent.key)
        counts[sent.paper_id] = counts[sent.paper_id] + count_matches(p, g)
    return {pid: prf.f_score for pid, prf in sorted(counts.items())}


STOPWORDS = frozenset("""
a an the and or but if of to in on for with by from at as is are was were be been being
this that these those it its we our us they their them he she his her you your i
which who whom whose what when where why how than then there here also such via
not no nor so too very can could may might must shall should will would do does did
has have had into onto over under about above below between through during each
both all any some more most other same own only just using use used based et al
""".split())


def context_frequencies(sentences, target: str, window: int, stopwords=STOPWORDS,
                        labels_of=None) -> Counter:
    """Counts of tokens within ``window`` positions of each occurrence of ``target``.

    Matching is case-insensitive over token sequences.  Matched tokens,
    stopwords and pure punctuation are not counted.  With ``labels_of`` only
    occurrences tagged as a span (starting with B) count.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    pattern = [normalize_token(t) for t in tokenize(target)]
    pattern = [t for t in pattern if t]
    counts: Counter = Counter()
    if not pattern:
        return counts
    m = len(pattern)
    for sent in sentences:
        tokens = sent.tokens if hasattr(sent, "tokens") else list(sent)
        norm = [normalize_token(t) for t in tokens]
        labels = labels_of(sent) if labels_of is not None else None
        for i in range(len(tokens) - m + 1):
            if norm[i:i + m] != pattern:
                continue
            if labels is not None and not labels[i].startswith("B"):
                continue
            lo, hi = max(0, i - window), min(len(tokens), i + m + window)
            for j in list(range(lo, i)) + list(range(i + m, hi)):
                term = norm[j]
                if term and term not in stopwords:
                    counts[term] += 1
    return counts


def write_frequencies(counts: Counter, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "count"])
        for term, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
            w.writerow([term, c])
