"""Minibatch training with AdamW and dev-loss plateau stopping."""
from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .corpus import Corpus
from .encoder import (EmbeddingTable, PrecomputedVectors, build_scorer, load_vectors)
from .labels import COARSE, LabelScheme, expand_labels, repair_bio
from .model import TaggerModel, split_long

logger = logging.getLogger(__name__)


class EmptyData(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dev_fraction: float = 0.1
    unk_dropout: float = 0.0  # chance of replacing a training token by UNK

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("learning_rate, batch_size, patience must be positive and max_epochs >= 0")
        if not 0 <= self.dev_fraction < 1 or not 0 <= self.unk_dropout < 1:
            raise ValueError("dev_fraction and unk_dropout must lie in [0, 1)")

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelSpec:
    """Architecture choices shared by every model a run builds."""

    scorer: str = "window-linear"   # window-linear | bilstm | precomputed
    decoder: str = "crf"            # crf | softmax
    dim: int = 100
    radius: int = 1
    hidden: int = 64
    vectors: Optional[str] = None       # text vector file; random init when None
    precomputed: Optional[str] = None   # JSON-lines per-sentence vectors
    collapse_o: bool = False
    use_bio_mask: bool = True
    lowercase: bool = False
    max_len: int = 256
    penalty: float = 1e4

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def derive_seed(seed: int, name: str = "") -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


_STORES: dict = {}


def load_store(path) -> PrecomputedVectors:
    key = str(path)
    if key not in _STORES:
        _STORES[key] = PrecomputedVectors.load(path)
    return _STORES[key]


def build_model(spec: ModelSpec, scheme: LabelScheme, sentences: Sequence, seed: int,
                name: str = "") -> TaggerModel:
    """Fresh model whose vocabulary covers ``sentences`` (for trainable embeddings)."""
    rng = derive_seed(seed, name)
    table = store = None
    if spec.scorer == "precomputed":
        if not spec.precomputed:
            raise ValueError("precomputed scorer needs ModelSpec.precomputed")
        store = load_store(spec.precomputed)
    elif spec.vectors:
        table = load_vectors(spec.vectors, trainable=True, lowercase=spec.lowercase)
    else:
        vocab = {t for s in sentences for t in s.tokens}
        table = EmbeddingTable.random(vocab, spec.dim, rng, lowercase=spec.lowercase)
    scorer = build_scorer(spec.scorer, len(scheme), rng, table=table, store=store,
                          radius=spec.radius, hidden=spec.hidden)
    return TaggerModel.create(scorer, scheme, spec.decoder, spec.use_bio_mask,
                              penalty=spec.penalty, max_len=spec.max_len)


# --------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adam with decoupled weight decay; updates arrays in place."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8, no_decay: Sequence[str] = ("transitions",)):
        self.params = params
        self.lr = lr
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.no_decay = set(no_decay)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd and name not in self.no_decay:
                p -= self.lr * self.wd * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --------------------------------------------------------------------------
# training loop


def _sentences(data) -> list:
    return list(data.sentences if isinstance(data, Corpus) else data)


def make_examples(model: TaggerModel, sentences: Sequence) -> list:
    """(tokens, gold indices, key) triples in the model's scheme, split to max_len."""
    scheme = model.scheme
    out = []
    for sent in sentences:
        labels = list(sent.labels)
        if scheme.is_fine and all(lab in COARSE for lab in labels):
            labels = [str(x) for x in expand_labels(labels, sent.category, scheme)]
        pieces = split_long(labels, model.max_len)
        key = getattr(sent, "key", None)
        for lo, hi in pieces:
            chunk = labels[lo:hi]
            piece_key = key
            if len(pieces) > 1:
                chunk = repair_bio(chunk)
                if key is not None:
                    piece_key = tuple(key) + (lo, hi)
            out.append((list(sent.tokens[lo:hi]), scheme.encode(chunk), piece_key))
    return out


def _mean_loss(model: TaggerModel, examples) -> float:
    if not examples:
        return 0.0
    return float(sum(model.loss(t, g, k) for t, g, k in examples) / len(examples))


def train(model: TaggerModel, data, config: TrainConfig, dev=None,
          history: list | None = None) -> TaggerModel:
    """Fit ``model`` in place and return it, restored to its best-dev checkpoint.

    The starting parameters count as a candidate checkpoint, so the returned
    model never has a higher dev loss than the one passed in.  Without an
    explicit ``dev`` set, a seeded ``dev_fraction`` of ``data`` is held out
    (none for fewer than 10 sentences, in which case the training loss is
    monitored instead).
    """
    sentences = _sentences(data)
    if not sentences:
        raise EmptyData("no training sentences")
    rng = np.random.default_rng(config.seed)
    if dev is None:
        n_dev = int(round(config.dev_fraction * len(sentences))) if len(sentences) >= 10 else 0
        order = rng.permutation(len(sentences))
        dev_sents = [sentences[i] for i in sorted(order[:n_dev])]
        train_sents = [sentences[i] for i in sorted(order[n_dev:])]
    else:
        dev_sents, train_sents = _sentences(dev), sentences
    if config.max_epochs == 0:
        return model

    model.scorer.observe((t for s in sentences for t in s.tokens), rng)
    examples = make_examples(model, train_sents)
    dev_examples = make_examples(model, dev_sents) if dev_sents else examples

    params = model.parameters()
    opt = AdamW(params, config.learning_rate, config.weight_decay,
                (config.beta1, config.beta2), config.eps)
    best_loss = _mean_loss(model, dev_examples)
    best = {k: v.copy() for k, v in params.items()}
    bad = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(examples))
        train_loss = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo:lo + config.batch_size]
            grads = model.zero_grads()
            for i in batch:
                tokens, gold, key = examples[i]
                drop = None
                if config.unk_dropout > 0:
                    drop = rng.random(len(tokens)) < config.unk_dropout
                loss, _ = model.nll_and_gradients(tokens, gold, key, grads, drop)
                train_loss += loss
            scale = 1.0 / len(batch)
            for g in grads.values():
                g *= scale
            opt.step(grads)
        dev_loss = _mean_loss(model, dev_examples)
        if history is not None:
            history.append({"epoch": epoch + 1, "train_loss": train_loss / len(examples),
                            "dev_loss": dev_loss})
        logger.debug("epoch %d train %.4f dev %.4f", epoch + 1, train_loss / len(examples), dev_loss)
        if dev_loss < best_loss - 1e-12:
            best_loss = dev_loss
            best = {k: v.copy() for k, v in params.items()}
            bad = 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    for name, value in best.items():
        params[name][...] = value
    return model
