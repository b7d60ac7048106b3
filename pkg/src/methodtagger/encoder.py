"""Per-token emission scorers feeding the CRF.

Three kinds share one small interface (``forward`` returns scores plus a
cache, ``backward`` accumulates parameter gradients into a dict):

* ``window-linear``: a linear map over the concatenated embeddings of a
  ``2r + 1`` token window (zero padded at the edges);
* ``bilstm``: a single-layer bidirectional LSTM over embeddings followed by a
  linear output layer;
* ``precomputed``: a linear map over externally computed per-token vectors
  (e.g. contextual encoder outputs) looked up by ``(paper_id, sentence_index)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNK = "<unk>"
INIT_SCALE = 0.1


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DimensionError(ParseError):
    pass


class DimensionMismatch(ValueError):
    pass


def _uniform(rng: np.random.Generator, *shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


@dataclass
class EmbeddingTable:
    itos: list
    vectors: np.ndarray
    trainable: bool = True
    lowercase: bool = False
    stoi: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.itos or self.itos[0] != UNK:
            raise ValueError("index 0 must be the UNK entry")
        if self.vectors.shape[0] != len(self.itos):
            raise DimensionMismatch("vocabulary and vector rows differ")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.itos)

    def _key(self, token: str) -> str:
        return token.lower() if self.lowercase else token

    def indices(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(self._key(t), 0) for t in tokens], dtype=np.int64)

    def grow(self, tokens: Iterable[str], rng: np.random.Generator) -> int:
        """Append unseen tokens with fresh random rows; returns how many were added."""
        new = []
        seen = set()
        for tok in tokens:
            key = self._key(tok)
            if key not in self.stoi and key not in seen:
                seen.add(key)
                new.append(key)
        if new:
            for tok in new:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)
            self.vectors = np.vstack([self.vectors, _uniform(rng, len(new), self.dim)])
        return len(new)

    @classmethod
    def random(cls, tokens: Iterable[str], dim: int, rng: np.random.Generator,
               lowercase: bool = False, trainable: bool = True) -> "EmbeddingTable":
        table = cls([UNK], _uniform(rng, 1, dim), trainable=trainable, lowercase=lowercase)
        table.grow(sorted(set(tokens)), rng)
        return table


def embed(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Row i is the vector of token i, the UNK row for unknown tokens."""
    return table.vectors[table.indices(tokens)]


def load_vectors(path, trainable: bool = False, lowercase: bool = False) -> EmbeddingTable:
    """Read a text vector file.

    Line 1 is ``"<|V|> <d>"``, every following line ``"<token> v1 ... vd"``.
    A token literally named ``<unk>`` provides the UNK row; otherwise UNK is
    the zero vector.  Duplicate tokens are rejected.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError("header must be '<vocab size> <dim>'", 1)
        try:
            size, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError("header must hold two integers", 1) from None
        if size < 0 or dim < 1:
            raise ParseError("bad header values", 1)
        itos = [UNK]
        rows = [np.zeros(dim)]
        unk_row = None
        seen = set()
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DimensionError(f"expected {dim} values, got {len(values)}", lineno)
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise ParseError("non-numeric vector entry", lineno) from None
            key = token.lower() if lowercase else token
            if key in seen:
                raise ParseError(f"duplicate token {token!r}", lineno)
            seen.add(key)
            if key == UNK:
                unk_row = vec
                continue
            itos.append(key)
            rows.append(vec)
    if len(seen) != size:
        raise ParseError(f"header declares {size} rows, file has {len(seen)}")
    if unk_row is not None:
        rows[0] = unk_row
    return EmbeddingTable(itos, np.vstack(rows), trainable=trainable, lowercase=lowercase)


def save_vectors(table: EmbeddingTable, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for tok, row in zip(table.itos, table.vectors):
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


# --------------------------------------------------------------------------
# LSTM


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(x, wx, wh, b):
    """Left-to-right LSTM; gate order in the 4h axis is input, forget, cell, output."""
    n = x.shape[0]
    h_dim = wh.shape[0]
    hs = np.zeros((n + 1, h_dim))
    cs = np.zeros((n + 1, h_dim))
    gates = np.zeros((n, 4 * h_dim))
    for t in range(n):
        z = x[t] @ wx + hs[t] @ wh + b
        i = _sigmoid(z[:h_dim])
        f = _sigmoid(z[h_dim:2 * h_dim])
        g = np.tanh(z[2 * h_dim:3 * h_dim])
        o = _sigmoid(z[3 * h_dim:])
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = np.concatenate([i, f, g, o])
    return hs[1:], (x, hs, cs, gates)


def lstm_backward(cache, d_h, wx, wh):
    """Backprop through time; returns (d_x, d_wx, d_wh, d_b)."""
    x, hs, cs, gates = cache
    n = x.shape[0]
    h_dim = wh.shape[0]
    d_x = np.zeros_like(x)
    d_wx = np.zeros_like(wx)
    d_wh = np.zeros_like(wh)
    d_b = np.zeros(4 * h_dim)
    dh_next = np.zeros(h_dim)
    dc_next = np.zeros(h_dim)
    for t in range(n - 1, -1, -1):
        i, f, g, o = np.split(gates[t], 4)
        tc = np.tanh(cs[t + 1])
        dh = d_h[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * cs[t]
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)])
        d_wx += np.outer(x[t], dz)
        d_wh += np.outer(hs[t], dz)
        d_b += dz
        d_x[t] = wx @ dz
        dh_next = wh @ dz
        dc_next = dc * f
    return d_x, d_wx, d_wh, d_b


def bilstm_states(inputs, params: dict):
    """Concatenated forward/backward hidden states, shape n x 2h.

    ``params`` holds ``fw_wx, fw_wh, fw_b, bw_wx, bw_wh, bw_b``.
    """
    return _bilstm(np.asarray(inputs, dtype=np.float64), params)[0]


def _bilstm(x, p):
    hf, cache_f = lstm_forward(x, p["fw_wx"], p["fw_wh"], p["fw_b"])
    hb_rev, cache_b = lstm_forward(x[::-1], p["bw_wx"], p["bw_wh"], p["bw_b"])
    return np.hstack([hf, hb_rev[::-1]]), (cache_f, cache_b)


def _bilstm_backward(caches, d_states, p, grads):
    h_dim = p["fw_wh"].shape[0]
    cache_f, cache_b = caches
    dxf, dwx, dwh, db = lstm_backward(cache_f, d_states[:, :h_dim], p["fw_wx"], p["fw_wh"])
    grads["fw_wx"] += dwx
    grads["fw_wh"] += dwh
    grads["fw_b"] += db
    dxb, dwx, dwh, db = lstm_backward(cache_b, d_states[::-1, h_dim:], p["bw_wx"], p["bw_wh"])
    grads["bw_wx"] += dwx
    grads["bw_wh"] += dwh
    grads["bw_b"] += db
    return dxf + dxb[::-1]


# --------------------------------------------------------------------------
# precomputed vectors


class PrecomputedVectors:
    """Per-sentence ``n x d`` matrices keyed by ``(paper_id, sentence_index)``.

    File format: JSON lines, ``{"paper_id": str, "sentence_index": int,
    "vectors": [[float, ...], ...]}`` with one row per token.
    """

    def __init__(self, table: dict | None = None):
        self.table = dict(table or {})
        dims = {m.shape[1] for m in self.table.values()}
        if len(dims) > 1:
            raise DimensionMismatch(f"inconsistent vector sizes {sorted(dims)}")
        self.dim = dims.pop() if dims else 0

    def __contains__(self, key) -> bool:
        return key in self.table

    def get(self, key, n_tokens: int) -> np.ndarray:
        """Vectors for ``(paper_id, index)``, or a row slice for ``(paper_id, index, lo, hi)``."""
        key = tuple(key)
        try:
            mat = self.table[key[:2]]
        except KeyError:
            raise KeyError(f"no precomputed vectors for sentence {key[:2]!r}") from None
        if len(key) == 4:
            mat = mat[key[2]:key[3]]
        if mat.shape[0] != n_tokens:
            raise DimensionMismatch(f"{key!r}: {mat.shape[0]} vectors for {n_tokens} tokens")
        return mat

    @classmethod
    def load(cls, path) -> "PrecomputedVectors":
        table = {}
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = (str(rec["paper_id"]), int(rec["sentence_index"]))
                    mat = np.asarray(rec["vectors"], dtype=np.float64)
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(str(exc), lineno) from None
                if mat.ndim != 2:
                    raise DimensionError("vectors must be a list of rows", lineno)
                if key in table:
                    raise ParseError(f"duplicate key {key!r}", lineno)
                table[key] = mat
        return cls(table)

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for (pid, idx), mat in sorted(self.table.items()):
                rec = {"paper_id": pid, "sentence_index": idx, "vectors": mat.tolist()}
                fh.write(json.dumps(rec) + "\n")


# --------------------------------------------------------------------------
# scorers


class EmissionScorer:
    """Base class; subclasses define ``kind``, ``params`` and the two passes."""

    kind = ""
    params: dict
    output_dim: int

    def forward(self, tokens, key=None, drop=None):
        raise NotImplementedError

    def backward(self, cache, d_scores, grads) -> None:
        raise NotImplementedError

    def scores(self, tokens, key=None) -> np.ndarray:
        return self.forward(tokens, key)[0]

    def zero_grads(self) -> dict:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def trainable_names(self) -> list:
        return sorted(self.params)

    def observe(self, tokens: Iterable[str], rng) -> int:
        """Extend the vocabulary with unseen training tokens (no-op by default)."""
        return 0

    def meta(self) -> dict:
        raise NotImplementedError


class _EmbeddingMixin:
    table: EmbeddingTable

    def _embed(self, tokens, drop):
        idx = self.table.indices(tokens)
        if drop is not None:
            idx = np.where(drop, 0, idx)
        return idx, self.table.vectors[idx]

    def _bind_table(self):
        if self.table.trainable:
            self.params["emb"] = self.table.vectors

    def observe(self, tokens, rng) -> int:
        if not self.table.trainable:
            return 0
        added = self.table.grow(tokens, rng)
        if added:
            self.params["emb"] = self.table.vectors
        return added

    def _table_meta(self) -> dict:
        return {"vocab": list(self.table.itos), "trainable": self.table.trainable,
                "lowercase": self.table.lowercase}


class WindowLinearScorer(_EmbeddingMixin, EmissionScorer):
    kind = "window-linear"

    def __init__(self, table: EmbeddingTable, output_dim: int, radius: int = 1,
                 rng: Optional[np.random.Generator] = None, params: dict | None = None):
        self.table = table
        self.radius = radius
        self.output_dim = output_dim
        width = (2 * radius + 1) * table.dim
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {"W": _uniform(rng, width, output_dim), "b": _uniform(rng, output_dim)}
        self.params = dict(params)
        self._bind_table()

    def forward(self, tokens, key=None, drop=None):
        idx, x = self._embed(tokens, drop)
        n, d = x.shape
        r = self.radius
        padded = np.vstack([np.zeros((r, d)), x, np.zeros((r, d))])
        feats = np.hstack([padded[j:j + n] for j in range(2 * r + 1)])
        return feats @ self.params["W"] + self.params["b"], (idx, feats)

    def backward(self, cache, d_scores, grads) -> None:
        idx, feats = cache
        n = feats.shape[0]
        d = self.table.dim
        r = self.radius
        grads["W"] += feats.T @ d_scores
        grads["b"] += d_scores.sum(axis=0)
        if "emb" in grads:
            d_feats = d_scores @ self.params["W"].T
            d_padded = np.zeros((n + 2 * r, d))
            for j in range(2 * r + 1):
                d_padded[j:j + n] += d_feats[:, j * d:(j + 1) * d]
            np.add.at(grads["emb"], idx, d_padded[r:r + n])

    def meta(self) -> dict:
        return {"kind": self.kind, "radius": self.radius, "output_dim": self.output_dim,
                **self._table_meta()}


class BiLSTMScorer(_EmbeddingMixin, EmissionScorer):
    kind = "bilstm"
    _LSTM = ("fw_wx", "fw_wh", "fw_b", "bw_wx", "bw_wh", "bw_b")

    def __init__(self, table: EmbeddingTable, output_dim: int, hidden: int = 64,
                 rng: Optional[np.random.Generator] = None, params: dict | None = None):
        self.table = table
        self.hidden = hidden
        self.output_dim = output_dim
        if params is None:
            rng = rng or np.random.default_rng(0)
            d, h = table.dim, hidden
            params = {}
            for side in ("fw", "bw"):
                params[f"{side}_wx"] = _uniform(rng, d, 4 * h)
                params[f"{side}_wh"] = _uniform(rng, h, 4 * h)
                params[f"{side}_b"] = _uniform(rng, 4 * h)
            params["W"] = _uniform(rng, 2 * h, output_dim)
            params["b"] = _uniform(rng, output_dim)
        self.params = dict(params)
        self._bind_table()

    def forward(self, tokens, key=None, drop=None):
        idx, x = self._embed(tokens, drop)
        states, caches = _bilstm(x, self.params)
        return states @ self.params["W"] + self.params["b"], (idx, states, caches)

    def backward(self, cache, d_scores, grads) -> None:
        idx, states, caches = cache
        grads["W"] += states.T @ d_scores
        grads["b"] += d_scores.sum(axis=0)
        d_states = d_scores @ self.params["W"].T
        d_x = _bilstm_backward(caches, d_states, self.params, grads)
        if "emb" in grads:
            np.add.at(grads["emb"], idx, d_x)

    def meta(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "output_dim": self.output_dim,
                **self._table_meta()}


class PrecomputedScorer(EmissionScorer):
    kind = "precomputed"

    def __init__(self, store: PrecomputedVectors, output_dim: int, dim: int | None = None,
                 rng: Optional[np.random.Generator] = None, params: dict | None = None):
        self.store = store
        self.output_dim = output_dim
        dim = dim or store.dim
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {"W": _uniform(rng, dim, output_dim), "b": _uniform(rng, output_dim)}
        self.params = dict(params)

    def forward(self, tokens, key=None, drop=None):
        if key is None:
            raise KeyError("precomputed scorer needs a (paper_id, sentence_index) key")
        x = self.store.get(key, len(tokens))
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, d_scores, grads) -> None:
        grads["W"] += cache.T @ d_scores
        grads["b"] += d_scores.sum(axis=0)

    def meta(self) -> dict:
        return {"kind": self.kind, "output_dim": self.output_dim,
                "dim": int(self.params["W"].shape[0])}


def emission_scores(tokens, scorer: EmissionScorer, scheme, key=None) -> np.ndarray:
    """n x |Y| score matrix; checks the scorer matches the label scheme."""
    if scorer.output_dim != len(scheme):
        raise DimensionMismatch(f"scorer emits {scorer.output_dim} scores, scheme has {len(scheme)} labels")
    out = scorer.scores(tokens, key)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite emission scores")
    return out


def build_scorer(kind: str, output_dim: int, rng: np.random.Generator, *,
                 table: EmbeddingTable | None = None, store: PrecomputedVectors | None = None,
                 radius: int = 1, hidden: int = 64) -> EmissionScorer:
    if kind == "window-linear":
        return WindowLinearScorer(table, output_dim, radius=radius, rng=rng)
    if kind == "bilstm":
        return BiLSTMScorer(table, output_dim, hidden=hidden, rng=rng)
    if kind == "precomputed":
        if store is None:
            raise ValueError("precomputed scorer needs a vector store")
        return PrecomputedScorer(store, output_dim, rng=rng)
    raise ValueError(f"unknown scorer kind {kind!r}")


def scorer_from_state(meta: dict, arrays: dict, store: PrecomputedVectors | None = None):
    kind = meta["kind"]
    if kind == "precomputed":
        return PrecomputedScorer(store or PrecomputedVectors(), meta["output_dim"],
                                 dim=meta["dim"], params=arrays)
    params = {k: v for k, v in arrays.items() if k != "emb"}
    table = EmbeddingTable(list(meta["vocab"]), arrays["emb"], trainable=meta["trainable"],
                           lowercase=meta.get("lowercase", False))
    if kind == "window-linear":
        return WindowLinearScorer(table, meta["output_dim"], radius=meta["radius"], params=params)
    if kind == "bilstm":
        return BiLSTMScorer(table, meta["output_dim"], hidden=meta["hidden"], params=params)
    raise ValueError(f"unknown scorer kind {kind!r}")


def scorer_arrays(scorer: EmissionScorer) -> dict:
    arrays = dict(scorer.params)
    if hasattr(scorer, "table"):
        arrays["emb"] = scorer.table.vectors
    return arrays
