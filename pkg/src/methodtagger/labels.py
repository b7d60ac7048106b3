"""Coarse and category-factored label inventories.

Coarse labels are the plain strings ``"B"``, ``"I"`` and ``"O"``.  Fine labels
pair an indicator with a category and serialize as ``"B-NLP"``; with
``collapse_o`` every outside label becomes the bare ``"O"``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

COARSE = ("B", "I", "O")
BINARY_CATEGORIES = ("GEN", "REST")


class Category(str, enum.Enum):
    """Broad method category attached to each paper."""

    AUDIO = "AUDIO"
    CV = "CV"
    GEN = "GEN"
    GRAPH = "GRAPH"
    NLP = "NLP"
    RL = "RL"
    SEQ = "SEQ"

    def __str__(self) -> str:
        return self.value


# canonical (alphabetical) order used for every label index
CATEGORIES = tuple(sorted(Category, key=lambda c: c.value))


class SchemeMismatch(ValueError):
    pass


def parse_category(value) -> Category:
    if isinstance(value, Category):
        return value
    try:
        return Category(str(value).strip().upper())
    except ValueError:
        raise ValueError(f"unknown category {value!r}") from None


def coarsen_category(category) -> str:
    """GEN stays GEN, the six other categories merge into REST."""
    return "GEN" if parse_category(category) is Category.GEN else "REST"


class FineLabel(NamedTuple):
    indicator: str
    category: Optional[str]

    def __str__(self) -> str:
        if self.category is None:
            return self.indicator
        return f"{self.indicator}-{self.category}"

    @classmethod
    def parse(cls, text: str) -> "FineLabel":
        indicator, _, category = text.partition("-")
        if indicator not in COARSE:
            raise ValueError(f"bad label {text!r}")
        return cls(indicator, category or None)


@dataclass(frozen=True)
class LabelScheme:
    kind: str  # "coarse", "fine" or "fine-binary"
    collapse_o: bool = False
    inventory: tuple = field(init=False)

    def __post_init__(self):
        if self.kind not in ("coarse", "fine", "fine-binary"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "coarse":
            inv = COARSE
        else:
            groups = (tuple(c.value for c in CATEGORIES) if self.kind == "fine"
                      else BINARY_CATEGORIES)
            labels = []
            for group in groups:
                labels.append(f"B-{group}")
                labels.append(f"I-{group}")
                if not self.collapse_o:
                    labels.append(f"O-{group}")
            if self.collapse_o:
                labels.append("O")
            inv = tuple(labels)
        object.__setattr__(self, "inventory", inv)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(inv)})

    def __len__(self) -> int:
        return len(self.inventory)

    @property
    def is_fine(self) -> bool:
        return self.kind != "coarse"

    def index(self, label) -> int:
        return self._index[str(label)]

    def label(self, idx: int) -> str:
        return self.inventory[idx]

    def encode(self, labels: Sequence) -> list:
        return [self._index[str(lab)] for lab in labels]

    def decode(self, indices: Sequence[int]) -> list:
        return [self.inventory[i] for i in indices]

    def group_of(self, category) -> str:
        if self.kind == "fine":
            return parse_category(category).value
        if self.kind == "fine-binary":
            return coarsen_category(category)
        raise SchemeMismatch("coarse scheme has no category groups")

    def descriptor(self) -> dict:
        return {"kind": self.kind, "collapse_o": self.collapse_o}

    @classmethod
    def from_descriptor(cls, desc: dict) -> "LabelScheme":
        return cls(desc["kind"], bool(desc.get("collapse_o", False)))


def expand_labels(labels: Sequence[str], category, scheme: LabelScheme) -> list:
    """Attach the (possibly coarsened) category to every coarse label."""
    if not scheme.is_fine:
        raise SchemeMismatch("expand_labels needs a fine or fine-binary scheme")
    group = scheme.group_of(category)
    out = []
    for lab in labels:
        if lab not in COARSE:
            raise ValueError(f"not a coarse label: {lab!r}")
        if lab == "O" and scheme.collapse_o:
            out.append(FineLabel("O", None))
        else:
            out.append(FineLabel(lab, group))
    return out


def project_labels(labels: Sequence) -> list:
    """Strip the category component: <Z, c> -> Z."""
    out = []
    for lab in labels:
        if isinstance(lab, FineLabel):
            out.append(lab.indicator)
        else:
            out.append(str(lab).partition("-")[0])
    return out


def split_label(label: str):
    indicator, _, group = str(label).partition("-")
    return indicator, (group or None)


def is_valid_bio(labels: Sequence) -> bool:
    """No I at position 0, no I after O, and (for fine labels) no category switch inside a span."""
    prev_ind, prev_group = "O", None
    for lab in labels:
        ind, group = split_label(lab)
        if ind not in COARSE:
            return False
        if ind == "I":
            if prev_ind == "O" or group != prev_group:
                return False
        prev_ind, prev_group = ind, group
    return True


def repair_bio(labels: Sequence[str]) -> list:
    """Turn every I that cannot continue a span into a B of the same group."""
    out = []
    prev_ind, prev_group = "O", None
    for lab in labels:
        ind, group = split_label(lab)
        if ind == "I" and (prev_ind == "O" or group != prev_group):
            ind = "B"
            lab = "B" if group is None else f"B-{group}"
        out.append(lab)
        prev_ind, prev_group = ind, group
    return out
