"""The trainable tagger: emission scorer + transition matrix + label scheme."""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import crf
from .crf import TransitionMatrix, bio_mask, structural_mask
from .encoder import (DimensionMismatch, EmissionScorer, PrecomputedVectors,
                      scorer_arrays, scorer_from_state)
from .labels import LabelScheme

FORMAT_VERSION = 1
DEFAULT_MAX_LEN = 256


@dataclass
class TaggerModel:
    scorer: EmissionScorer
    transitions: TransitionMatrix
    scheme: LabelScheme
    decoder: str = "crf"            # "crf" or "softmax"
    penalty: float = crf.DEFAULT_PENALTY
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        if self.scorer.output_dim != len(self.scheme):
            raise DimensionMismatch("scorer output size does not match the label scheme")
        if self.decoder not in ("crf", "softmax"):
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.transitions.num_labels != len(self.scheme):
            raise DimensionMismatch("transition matrix does not match the label scheme")

    @classmethod
    def create(cls, scorer: EmissionScorer, scheme: LabelScheme, decoder: str = "crf",
               use_bio_mask: bool = True, **kw) -> "TaggerModel":
        k = len(scheme)
        mask = bio_mask(scheme) if use_bio_mask else structural_mask(k)
        return cls(scorer, TransitionMatrix.zeros(k, mask), scheme, decoder, **kw)

    # -- parameters -------------------------------------------------------

    def parameters(self) -> dict:
        params = {f"scorer.{k}": v for k, v in self.scorer.params.items()}
        if self.decoder == "crf":
            params["transitions"] = self.transitions.scores
        return params

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.parameters().items()}

    # -- scoring ----------------------------------------------------------

    def emissions(self, tokens: Sequence[str], key=None) -> np.ndarray:
        return self.scorer.scores(tokens, key)

    def nll_and_gradients(self, tokens: Sequence[str], gold: Sequence[int], key=None,
                          grads: dict | None = None, drop=None):
        """Loss for one sentence; gradients are added into ``grads`` (created if None)."""
        if grads is None:
            grads = self.zero_grads()
        scores, cache = self.scorer.forward(tokens, key, drop)
        if self.decoder == "crf":
            loss, d_em, d_tr = crf.crf_nll(scores, self.transitions, gold, self.penalty)
            grads["transitions"] += d_tr
        else:
            loss, d_em = crf.softmax_nll(scores, gold)
        sub = {k[len("scorer."):]: v for k, v in grads.items() if k.startswith("scorer.")}
        self.scorer.backward(cache, d_em, sub)
        return loss, grads

    def loss(self, tokens, gold, key=None) -> float:
        scores = self.emissions(tokens, key)
        if self.decoder == "crf":
            trans, start, stop = self.transitions.parts(-abs(self.penalty))
            log_z = crf.get_kernels().forward(np.ascontiguousarray(scores), trans, start, stop)[1]
            gold_score = crf.path_score(scores, self.transitions, gold, -abs(self.penalty))
            return max(log_z - gold_score, 0.0)
        return crf.softmax_nll(scores, gold)[0]

    # -- decoding ---------------------------------------------------------

    def decode_indices(self, tokens: Sequence[str], key=None) -> list:
        if not tokens:
            return []
        scores = self.emissions(tokens, key)
        out = []
        for lo in range(0, len(tokens), self.max_len):
            chunk = scores[lo:lo + self.max_len]
            if self.decoder == "crf":
                out.extend(crf.viterbi(chunk, self.transitions)[0])
            else:
                out.extend(self.scheme.encode(crf.softmax_decode(chunk, self.scheme)))
        return out

    def decode(self, tokens: Sequence[str], key=None) -> list:
        """Label strings in this model's scheme."""
        return self.scheme.decode(self.decode_indices(tokens, key))

    def path_probability(self, tokens, key=None) -> float:
        """Probability of the Viterbi path under the CRF (1.0 for empty input)."""
        if not tokens:
            return 1.0
        scores = self.emissions(tokens, key)
        path, score = crf.viterbi(scores, self.transitions)
        return float(np.exp(score - crf.log_partition(scores, self.transitions)))

    # -- persistence ------------------------------------------------------

    def copy(self) -> "TaggerModel":
        return TaggerModel.from_bytes(self.to_bytes(), getattr(self.scorer, "store", None))

    def to_bytes(self) -> bytes:
        meta = {
            "format_version": FORMAT_VERSION,
            "scheme": self.scheme.descriptor(),
            "decoder": self.decoder,
            "penalty": self.penalty,
            "max_len": self.max_len,
            "scorer": self.scorer.meta(),
        }
        arrays = {f"scorer.{k}": v for k, v in scorer_arrays(self.scorer).items()}
        arrays["transitions.scores"] = self.transitions.scores
        arrays["transitions.mask"] = self.transitions.mask
        arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                                           dtype=np.uint8)
        return _npz_bytes(arrays)

    @classmethod
    def from_bytes(cls, data: bytes, store: PrecomputedVectors | None = None) -> "TaggerModel":
        with np.load(io.BytesIO(data), allow_pickle=False) as npz:
            arrays = {k: npz[k].copy() for k in npz.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {meta.get('format_version')!r}")
        scorer_arrays_ = {k[len("scorer."):]: v for k, v in arrays.items() if k.startswith("scorer.")}
        scorer = scorer_from_state(meta["scorer"], scorer_arrays_, store)
        transitions = TransitionMatrix(arrays["transitions.scores"],
                                       arrays["transitions.mask"].astype(bool))
        return cls(scorer, transitions, LabelScheme.from_descriptor(meta["scheme"]),
                   meta["decoder"], meta["penalty"], meta["max_len"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, store: PrecomputedVectors | None = None) -> "TaggerModel":
        return cls.from_bytes(Path(path).read_bytes(), store)


def _npz_bytes(arrays: dict) -> bytes:
    """``np.savez`` layout with fixed zip timestamps, so equal models give equal bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            body = io.BytesIO()
            np.lib.format.write_array(body, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(info, body.getvalue())
    return buf.getvalue()


def split_long(labels: Sequence[str], max_len: int) -> list:
    """Cut points so that no piece exceeds ``max_len`` tokens.

    Each cut is placed right before the last O label that keeps the piece
    within bounds, so no span is broken; without such an O the cut falls at
    ``max_len``.  Returns a list of (start, end) index pairs.
    """
    n = len(labels)
    pieces = []
    lo = 0
    while n - lo > max_len:
        cut = None
        for j in range(lo + max_len, lo, -1):
            if labels[j].startswith("O"):
                cut = j
                break
        if cut is None:
            cut = lo + max_len
        pieces.append((lo, cut))
        lo = cut
    pieces.append((lo, n))
    return pieces
