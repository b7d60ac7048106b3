"""Distantly supervised corpus construction from pre-parsed papers.

Input papers are JSON lines (see :func:`read_papers`); output datasets are
tab-separated column files with one token per line and a blank line between
sentences::

    token <TAB> label <TAB> category <TAB> paper_year <TAB> paper_id
"""
from __future__ import annotations

import json
import logging
import math
import random
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .labels import Category, is_valid_bio, parse_category

logger = logging.getLogger(__name__)

YEAR_RANGE = (1950, 2100)


class EmptyTags(ValueError):
    pass


class MalformedPaper(ValueError):
    pass


@dataclass(frozen=True)
class MethodTag:
    surface: str
    first_year: int

    def __post_init__(self):
        if not self.surface.strip():
            raise MalformedPaper("tag surface is empty")
        if not YEAR_RANGE[0] <= int(self.first_year) <= YEAR_RANGE[1]:
            raise MalformedPaper(f"tag year {self.first_year} out of range")


@dataclass
class RawPaper:
    paper_id: str
    title: str
    sections: list  # of (heading, body)
    tags: list      # of MethodTag
    category: Category

    @classmethod
    def from_dict(cls, rec: dict) -> "RawPaper":
        try:
            pid = str(rec["paper_id"])
            if not pid:
                raise MalformedPaper("empty paper_id")
            sections = [(str(s.get("heading", "")), str(s.get("body", "")))
                        for s in rec.get("sections", [])]
            tags = [MethodTag(str(t["surface"]), int(t["first_year"]))
                    for t in rec.get("tags") or []]
            category = parse_category(rec["category"])
        except MalformedPaper:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise MalformedPaper(f"bad paper record: {exc}") from None
        return cls(pid, str(rec.get("title", "")), sections, tags, category)

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "title": self.title,
            "sections": [{"heading": h, "body": b} for h, b in self.sections],
            "tags": [{"surface": t.surface, "first_year": t.first_year} for t in self.tags],
            "category": self.category.value,
        }


@dataclass
class LabeledSentence:
    tokens: list
    labels: list
    category: Category
    paper_year: int
    paper_id: str
    index: int = 0  # position of the sentence within its paper

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise ValueError("tokens and labels differ in length")
        if any(not t for t in self.tokens):
            raise ValueError("empty token")
        if not is_valid_bio(self.labels):
            raise ValueError(f"labels are not BIO-valid: {self.labels}")

    @property
    def key(self):
        return (self.paper_id, self.index)

    def with_labels(self, labels) -> "LabeledSentence":
        return LabeledSentence(list(self.tokens), list(labels), self.category,
                               self.paper_year, self.paper_id, self.index)


@dataclass
class Corpus:
    sentences: list = field(default_factory=list)
    tag_index: dict = field(default_factory=dict)  # normalized surface -> first year

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def subset(self, sentences) -> "Corpus":
        return Corpus(list(sentences), dict(self.tag_index))

    def years(self) -> list:
        return sorted({s.paper_year for s in self.sentences})


# --------------------------------------------------------------------------
# section selection


@dataclass(frozen=True)
class SectionFilter:
    keep: tuple = ("abstract", "introduction", "methodology", "methodologies", "method",
                   "methods", "approach", "approaches", "experiments", "experiment",
                   "experimental setup", "experimental settings", "experimental results",
                   "results")
    exclude: tuple = ("background", "related work", "related works", "conclusion",
                      "conclusions", "conclusions and future work", "future work",
                      "acknowledgement", "acknowledgements", "acknowledgment",
                      "acknowledgments", "references", "bibliography", "appendix",
                      "appendices")


_NUMBERING = re.compile(r"^(?:\d+(?:\.\d+)*\.?|[ivxlc]+\.|[a-z][.)])\s+")


def normalize_heading(heading: str) -> str:
    """Lowercase, drop leading section numbering and punctuation, squeeze spaces."""
    text = heading.strip().lower()
    text = _NUMBERING.sub("", text)
    text = re.sub(r"[^\w\s]", " ", text)
    text = re.sub(r"\d+", " ", text)
    return " ".join(text.split())


def _has_phrase(text: str, phrase: str) -> bool:
    return f" {phrase} " in f" {text} "


def select_sections(paper: RawPaper, keep_rules: SectionFilter = SectionFilter()) -> list:
    """Bodies of the abstract/introduction/method/experiment/result sections, in order."""
    out = []
    for heading, body in paper.sections:
        norm = normalize_heading(heading)
        if not norm:
            continue
        if any(_has_phrase(norm, p) for p in keep_rules.exclude):
            continue
        if any(_has_phrase(norm, p) for p in keep_rules.keep):
            out.append(body)
    return out


# --------------------------------------------------------------------------
# sentences and tokens

ABBREVIATIONS = frozenset({
    "al.", "fig.", "figs.", "eq.", "eqs.", "e.g.", "i.e.", "vs.", "cf.", "sec.", "secs.",
    "tab.", "no.", "nos.", "ref.", "refs.", "resp.", "approx.", "dr.", "mr.", "mrs.",
    "ms.", "prof.", "st.", "ch.", "vol.", "pp.", "p.", "viz.",
})

_BOUNDARY = re.compile(r"[.!?](?=\s+[A-Z])")


def segment_sentences(text: str) -> list:
    """Split at . ! ? followed by whitespace and an uppercase letter, skipping abbreviations."""
    sentences = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        end = m.end()
        if text[m.start()] == ".":
            word_start = max(text.rfind(" ", 0, m.start()), text.rfind("\n", 0, m.start()),
                             text.rfind("\t", 0, m.start())) + 1
            word = text[word_start:end].lower()
            if word in ABBREVIATIONS:
                continue
        piece = text[start:end].strip()
        if piece:
            sentences.append(piece)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


EDGE_PUNCT = frozenset(".,;:!?()[]{}<>\"'`“”‘’")


def tokenize(sentence: str) -> list:
    """Whitespace split, then peel punctuation off both ends of each chunk."""
    tokens = []
    for chunk in sentence.split():
        lead = []
        while chunk and chunk[0] in EDGE_PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in EDGE_PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


_STRIP = string.punctuation.replace("+", "").replace("#", "") + "“”‘’"


def normalize_token(token: str) -> str:
    return token.lower().strip(_STRIP)


def normalize_surface(surface: str) -> str:
    """Canonical key used for tag matching and the tag index."""
    return " ".join(t for t in (normalize_token(x) for x in tokenize(surface)) if t)


def _surface_keys(tags) -> dict:
    keys = {}
    for tag in tags:
        surface = tag.surface if isinstance(tag, MethodTag) else str(tag)
        norm = tuple(t for t in (normalize_token(x) for x in tokenize(surface)) if t)
        if norm:
            keys[norm] = surface
    return keys


def weak_label(tokens: Sequence[str], tags) -> list:
    """Greedy longest match of tag surfaces, left to right, without overlaps.

    ``tags`` holds :class:`MethodTag` objects or plain surface strings.
    """
    keys = _surface_keys(tags)
    longest = max((len(k) for k in keys), default=0)
    norm = [normalize_token(t) for t in tokens]
    labels = ["O"] * len(tokens)
    i = 0
    while i < len(tokens):
        matched = 0
        if norm[i]:
            for length in range(min(longest, len(tokens) - i), 0, -1):
                window = norm[i:i + length]
                if all(window) and tuple(window) in keys:
                    matched = length
                    break
        if matched:
            labels[i] = "B"
            for j in range(i + 1, i + matched):
                labels[j] = "I"
            i += matched
        else:
            i += 1
    return labels


def assign_timestamp(paper: RawPaper) -> int:
    """Most recent first-appearance year among the paper's tags."""
    if not paper.tags:
        raise EmptyTags(f"paper {paper.paper_id} has no methodology tags")
    return max(t.first_year for t in paper.tags)


# --------------------------------------------------------------------------
# corpus assembly


@dataclass
class BuildStats:
    papers_read: int = 0
    papers_kept: int = 0
    dropped_no_tags: int = 0
    dropped_no_sections: int = 0
    malformed_lines: int = 0
    sentences: int = 0
    spans: int = 0
    negatives_dropped: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def paper_sentences(paper: RawPaper, year: int, keep_rules: SectionFilter = SectionFilter()):
    """Weakly labeled sentences of one paper (no negative sampling)."""
    out = []
    for body in select_sections(paper, keep_rules):
        for sent in segment_sentences(body):
            tokens = tokenize(sent)
            if not tokens:
                continue
            labels = weak_label(tokens, paper.tags)
            out.append(LabeledSentence(tokens, labels, paper.category, year,
                                       paper.paper_id, len(out)))
    return out


def build_corpus(papers: Iterable[RawPaper], keep_rules: SectionFilter = SectionFilter(),
                 negative_rate: float = 1.0, seed: int = 0, stats: BuildStats | None = None):
    """Assemble a corpus; returns ``(corpus, stats)``.

    All-O sentences are kept with probability ``negative_rate``.
    """
    stats = stats or BuildStats()
    rng = random.Random(seed)
    corpus = Corpus()
    seen_ids = set()
    for paper in papers:
        stats.papers_read += 1
        if paper.paper_id in seen_ids:
            raise MalformedPaper(f"duplicate paper_id {paper.paper_id!r}")
        seen_ids.add(paper.paper_id)
        try:
            year = assign_timestamp(paper)
        except EmptyTags:
            stats.dropped_no_tags += 1
            logger.info("dropping %s: no tags", paper.paper_id)
            continue
        sentences = paper_sentences(paper, year, keep_rules)
        if not sentences:
            stats.dropped_no_sections += 1
            logger.info("paper %s has no usable sections", paper.paper_id)
        stats.papers_kept += 1
        for tag in paper.tags:
            key = normalize_surface(tag.surface)
            if key:
                prev = corpus.tag_index.get(key)
                corpus.tag_index[key] = tag.first_year if prev is None else min(prev, tag.first_year)
        kept = 0
        for sent in sentences:
            if negative_rate < 1.0 and "B" not in sent.labels and rng.random() >= negative_rate:
                stats.negatives_dropped += 1
                continue
            sent.index = kept
            kept += 1
            corpus.sentences.append(sent)
            stats.sentences += 1
            stats.spans += sent.labels.count("B")
    return corpus, stats


def read_papers(path, stats: BuildStats | None = None) -> Iterator[RawPaper]:
    """Yield papers from a JSON-lines file; malformed lines are logged and counted."""
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield RawPaper.from_dict(json.loads(line))
            except (json.JSONDecodeError, MalformedPaper) as exc:
                logger.warning("skipping line %d: %s", lineno, exc)
                if stats is not None:
                    stats.malformed_lines += 1


def write_papers(papers: Iterable[RawPaper], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in papers:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# column files


def write_dataset(sentences: Iterable[LabeledSentence], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            for tok, lab in zip(sent.tokens, sent.labels):
                fh.write(f"{tok}\t{lab}\t{sent.category.value}\t{sent.paper_year}\t{sent.paper_id}\n")
            fh.write("\n")


def read_dataset(path) -> list:
    """Read a column file; sentence indices are recounted per paper in file order."""
    sentences = []
    counters: Counter = Counter()
    rows: list = []

    def flush():
        if not rows:
            return
        tokens = [r[0] for r in rows]
        labels = [r[1] for r in rows]
        _, _, cat, year, pid = rows[0]
        sentences.append(LabeledSentence(tokens, labels, parse_category(cat), int(year),
                                         pid, counters[pid]))
        counters[pid] += 1
        rows.clear()

    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated columns")
            rows.append(parts)
    flush()
    return sentences


def write_tag_index(tag_index: dict, path) -> None:
    Path(path).write_text(json.dumps(dict(sorted(tag_index.items())), indent=1,
                                     ensure_ascii=False) + "\n", encoding="utf-8")


def read_tag_index(path) -> dict:
    return {str(k): int(v) for k, v in json.loads(Path(path).read_text(encoding="utf-8")).items()}


def tag_index_from_sentences(sentences: Iterable[LabeledSentence]) -> dict:
    """First year each labeled surface occurs in gold data (fallback when no KB index exists)."""
    index: dict = {}
    for sent in sentences:
        i = 0
        labels = sent.labels
        while i < len(labels):
            if labels[i].startswith("B"):
                j = i + 1
                while j < len(labels) and labels[j].startswith("I"):
                    j += 1
                key = normalize_surface(" ".join(sent.tokens[i:j]))
                if key:
                    index[key] = min(index.get(key, sent.paper_year), sent.paper_year)
                i = j
            else:
                i += 1
    return index


# --------------------------------------------------------------------------
# splits


def chronological_split(corpus: Corpus, cutoff: int):
    """Train = sentences with paper_year <= cutoff, test = the rest."""
    train = [s for s in corpus.sentences if s.paper_year <= cutoff]
    test = [s for s in corpus.sentences if s.paper_year > cutoff]
    return corpus.subset(train), corpus.subset(test)


def percentage_split(corpus: Corpus, ratio: float, seed: int):
    """Seeded shuffle, then the first round(ratio * n) sentences become train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    order = list(range(len(corpus)))
    random.Random(seed).shuffle(order)
    n_train = int(math.floor(ratio * len(order) + 0.5))
    train = [corpus.sentences[i] for i in sorted(order[:n_train])]
    test = [corpus.sentences[i] for i in sorted(order[n_train:])]
    return corpus.subset(train), corpus.subset(test)
