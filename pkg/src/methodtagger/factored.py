"""Plain, data-factored (DFG/DFGB) and label-factored (LFG/LFGB) taggers.

Every tagger exposes ``predict(sentence)`` returning coarse labels,
``retrain(sentences, config)`` for incremental updates and ``save(dir)``.
DFG prediction needs the sentence category; LFG prediction does not.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Corpus
from .labels import (BINARY_CATEGORIES, CATEGORIES, LabelScheme, coarsen_category,
                     parse_category, project_labels)
from .model import TaggerModel
from .training import EmptyData, ModelSpec, TrainConfig, build_model, load_store, train

logger = logging.getLogger(__name__)

KINDS = ("plain", "dfg", "dfgb", "lfg", "lfgb")


class EmptyPartition(ValueError):
    pass


class UnknownCategory(KeyError):
    pass


def routing_groups(routing: str) -> tuple:
    if routing == "fine7":
        return tuple(c.value for c in CATEGORIES)
    if routing == "binary":
        return BINARY_CATEGORIES
    raise ValueError(f"unknown routing {routing!r}")


def route(category, routing: str) -> str:
    cat = parse_category(category)
    return cat.value if routing == "fine7" else coarsen_category(cat)


def partition(sentences: Sequence, routing: str) -> dict:
    """Split sentences by (possibly coarsened) category; every group gets a list."""
    parts = {g: [] for g in routing_groups(routing)}
    for sent in sentences:
        parts[route(sent.category, routing)].append(sent)
    return parts


def _sentences(data) -> list:
    return list(data.sentences if isinstance(data, Corpus) else data)


def _spec_dict(spec: ModelSpec) -> dict:
    return asdict(spec)


def _store_for(spec: ModelSpec):
    return load_store(spec.precomputed) if spec.scorer == "precomputed" else None


@dataclass
class PlainTagger:
    model: TaggerModel
    spec: ModelSpec = field(default_factory=ModelSpec)
    kind: str = "plain"

    def predict(self, sentence) -> list:
        return self.model.decode(sentence.tokens, sentence.key)

    def retrain(self, sentences, config: TrainConfig) -> "PlainTagger":
        model = train(self.model.copy(), sentences, config)
        return PlainTagger(model, self.spec, self.kind)

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.model.save(path / "model.npz")
        _write_manifest(path, {"kind": self.kind, "spec": _spec_dict(self.spec),
                               "files": {"model": "model.npz"}})


@dataclass
class LfgModel:
    model: TaggerModel
    spec: ModelSpec = field(default_factory=ModelSpec)
    kind: str = "lfg"

    def predict(self, sentence) -> list:
        return predict_lfg(self, sentence.tokens, sentence.key)

    def retrain(self, sentences, config: TrainConfig) -> "LfgModel":
        model = train(self.model.copy(), sentences, config)
        return LfgModel(model, self.spec, self.kind)

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.model.save(path / "model.npz")
        _write_manifest(path, {"kind": self.kind, "spec": _spec_dict(self.spec),
                               "scheme": self.model.scheme.descriptor(),
                               "files": {"model": "model.npz"}})


@dataclass
class DfgEnsemble:
    models: dict            # routing group -> TaggerModel (empty groups alias GEN)
    routing: str = "fine7"
    spec: ModelSpec = field(default_factory=ModelSpec)
    empty: tuple = ()       # groups that had no training data
    kind: str = "dfg"

    def predict(self, sentence) -> list:
        return predict_dfg(self, sentence.tokens, sentence.category, sentence.key)

    def retrain(self, sentences, config: TrainConfig) -> "DfgEnsemble":
        parts = partition(_sentences(sentences), self.routing)
        models = {}
        for group in routing_groups(self.routing):
            base = self.models[group]
            if parts[group]:
                models[group] = train(base.copy(), parts[group],
                                      config.replace(seed=_group_seed(config.seed, group)))
            else:
                models[group] = base
        empty = tuple(g for g in self.empty if not parts[g])
        for g in empty:
            models[g] = models["GEN"]
        return DfgEnsemble(models, self.routing, self.spec, empty, self.kind)

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        files = {}
        for group in routing_groups(self.routing):
            if group in self.empty:
                continue
            name = f"model-{group}.npz"
            self.models[group].save(path / name)
            files[group] = name
        _write_manifest(path, {"kind": self.kind, "routing": self.routing,
                               "spec": _spec_dict(self.spec), "empty": list(self.empty),
                               "fallback": "GEN", "files": files})


def _group_seed(seed: int, group: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{group}".encode()).digest()[:4], "little")


def train_plain(corpus, spec: ModelSpec, config: TrainConfig) -> PlainTagger:
    sentences = _sentences(corpus)
    if not sentences:
        raise EmptyData("no training sentences")
    model = build_model(spec, LabelScheme("coarse"), sentences, config.seed, "plain")
    return PlainTagger(train(model, sentences, config), spec)


def train_dfg(corpus, routing: str, spec: ModelSpec, config: TrainConfig,
              allow_empty: bool = True, jobs: int = 1) -> DfgEnsemble:
    """One coarse-label model per category partition.

    Groups without data get no model of their own and are routed to the GEN
    model; with ``allow_empty=False`` they raise :class:`EmptyPartition`.
    """
    sentences = _sentences(corpus)
    if not sentences:
        raise EmptyData("no training sentences")
    parts = partition(sentences, routing)
    empty = tuple(g for g, items in parts.items() if not items)
    if empty and (not allow_empty or "GEN" in empty):
        raise EmptyPartition(f"no training data for {', '.join(empty)}")
    scheme = LabelScheme("coarse")

    def fit(group):
        seed = _group_seed(config.seed, group)
        model = build_model(spec, scheme, parts[group], seed, group)
        return group, train(model, parts[group], config.replace(seed=seed))

    groups = [g for g in parts if g not in empty]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            fitted = dict(pool.map(fit, groups))
    else:
        fitted = dict(fit(g) for g in groups)
    for g in empty:
        logger.warning("category %s has no training data; routing it to GEN", g)
        fitted[g] = fitted["GEN"]
    models = {g: fitted[g] for g in routing_groups(routing)}
    return DfgEnsemble(models, routing, spec, empty, "dfg" if routing == "fine7" else "dfgb")


def predict_dfg(ensemble: DfgEnsemble, tokens: Sequence[str], category, key=None) -> list:
    if category is None:
        raise UnknownCategory("DFG prediction needs the sentence category")
    try:
        group = route(category, ensemble.routing)
    except ValueError as exc:
        raise UnknownCategory(str(exc)) from None
    if not tokens:
        return []
    return ensemble.models[group].decode(tokens, key)


def train_lfg(corpus, granularity: str, spec: ModelSpec, config: TrainConfig) -> LfgModel:
    """Single model over <indicator, category> labels."""
    sentences = _sentences(corpus)
    if not sentences:
        raise EmptyData("no training sentences")
    kind = "fine" if granularity == "fine7" else "fine-binary"
    if granularity not in ("fine7", "binary"):
        raise ValueError(f"unknown granularity {granularity!r}")
    scheme = LabelScheme(kind, collapse_o=spec.collapse_o)
    model = build_model(spec, scheme, sentences, config.seed, "lfg")
    return LfgModel(train(model, sentences, config), spec,
                    "lfg" if granularity == "fine7" else "lfgb")


def predict_lfg(model: LfgModel, tokens: Sequence[str], key=None) -> list:
    if not tokens:
        return []
    return project_labels(model.model.decode(tokens, key))


def train_tagger(kind: str, corpus, spec: ModelSpec, config: TrainConfig, jobs: int = 1):
    if kind == "plain":
        return train_plain(corpus, spec, config)
    if kind in ("dfg", "dfgb"):
        return train_dfg(corpus, "fine7" if kind == "dfg" else "binary", spec, config, jobs=jobs)
    if kind in ("lfg", "lfgb"):
        return train_lfg(corpus, "fine7" if kind == "lfg" else "binary", spec, config)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def _write_manifest(path: Path, manifest: dict) -> None:
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")


def load_tagger(path):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    spec = ModelSpec.from_dict(manifest["spec"])
    store = _store_for(spec)
    kind = manifest["kind"]
    if kind in ("plain", "lfg", "lfgb"):
        model = TaggerModel.load(path / manifest["files"]["model"], store)
        cls = PlainTagger if kind == "plain" else LfgModel
        return cls(model, spec, kind)
    if kind in ("dfg", "dfgb"):
        models = {g: TaggerModel.load(path / name, store) for g, name in manifest["files"].items()}
        empty = tuple(manifest.get("empty", ()))
        for g in empty:
            models[g] = models[manifest.get("fallback", "GEN")]
        return DfgEnsemble({g: models[g] for g in routing_groups(manifest["routing"])},
                           manifest["routing"], spec, empty, kind)
    raise ValueError(f"unknown model kind {kind!r} in {path}")
