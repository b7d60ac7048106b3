"""Linear-chain CRF: log-partition, Viterbi, NLL gradients and a softmax fallback.

The transition matrix is ``(K + 2) x (K + 2)`` with two virtual states:
index ``K`` is START and ``K + 1`` is STOP.  Forbidden moves are carried by a
boolean mask.  Decoding and :func:`log_partition` treat them as ``-inf``;
training substitutes a large finite penalty so gradients stay finite.

The inner loops live in ``_ckernels`` (Cython) when it is built and in
``_pykernels`` otherwise.  Set ``METHODTAGGER_KERNELS=python`` to force the
fallback.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _pykernels
from .labels import LabelScheme, split_label

logger = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_kernels = _pykernels
BACKEND = "python"


def available_backends() -> list:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global _kernels, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}")
    _kernels = _BACKENDS[name]
    BACKEND = name


def get_kernels(name: str | None = None):
    return _kernels if name is None else _BACKENDS[name]


set_backend("python" if os.environ.get("METHODTAGGER_KERNELS") == "python" or _ckernels is None
            else "compiled")

DEFAULT_PENALTY = 1e4


class NoValidPath(ValueError):
    pass


class InvalidGold(ValueError):
    pass


@dataclass
class TransitionMatrix:
    scores: np.ndarray  # (K+2, K+2); row = from, column = to
    mask: np.ndarray    # bool, same shape; False = forbidden

    @property
    def num_labels(self) -> int:
        return self.scores.shape[0] - 2

    @classmethod
    def zeros(cls, num_labels: int, mask=None) -> "TransitionMatrix":
        size = num_labels + 2
        if mask is None:
            mask = structural_mask(num_labels)
        return cls(np.zeros((size, size)), np.asarray(mask, dtype=bool))

    def parts(self, masked_value: float = -np.inf):
        """Split into (label->label, START->label, label->STOP) with masked entries filled."""
        k = self.num_labels
        eff = np.where(self.mask, self.scores, masked_value)
        trans = np.ascontiguousarray(eff[:k, :k])
        start = np.ascontiguousarray(eff[k, :k])
        stop = np.ascontiguousarray(eff[:k, k + 1])
        return trans, start, stop

    def copy(self) -> "TransitionMatrix":
        return TransitionMatrix(self.scores.copy(), self.mask.copy())


def structural_mask(num_labels: int) -> np.ndarray:
    """Only forbids moves into START, out of STOP and START->STOP."""
    size = num_labels + 2
    start, stop = num_labels, num_labels + 1
    mask = np.ones((size, size), dtype=bool)
    mask[:, start] = False
    mask[stop, :] = False
    mask[start, stop] = False
    return mask


def bio_mask(scheme: LabelScheme) -> np.ndarray:
    """Transition mask that makes every decodable path BIO-valid.

    Forbids O->I and START->I, and for fine schemes an I of one group after a
    B or I of another group.
    """
    k = len(scheme)
    mask = structural_mask(k)
    start = k
    parsed = [split_label(lab) for lab in scheme.inventory]
    for to, (to_ind, to_group) in enumerate(parsed):
        if to_ind != "I":
            continue
        mask[start, to] = False
        for frm, (frm_ind, frm_group) in enumerate(parsed):
            if frm_ind == "O" or frm_group != to_group:
                mask[frm, to] = False
    return mask


def _emissions(emissions) -> np.ndarray:
    em = np.ascontiguousarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise ValueError("emissions must be an n x K matrix with n >= 1")
    return em


def path_score(emissions, transitions: TransitionMatrix, path: Sequence[int],
               masked_value: float = -np.inf) -> float:
    """Explicit score of one label path including START and STOP transitions."""
    em = _emissions(emissions)
    trans, start, stop = transitions.parts(masked_value)
    total = start[path[0]] + em[0, path[0]]
    for i in range(1, len(path)):
        total += trans[path[i - 1], path[i]] + em[i, path[i]]
    return float(total + stop[path[-1]])


def log_partition(emissions, transitions: TransitionMatrix,
                  masked_value: float = -np.inf) -> float:
    em = _emissions(emissions)
    trans, start, stop = transitions.parts(masked_value)
    return _kernels.forward(em, trans, start, stop)[1]


def viterbi(emissions, transitions: TransitionMatrix):
    """Best path and its score; ties go to the lowest label index."""
    em = _emissions(emissions)
    trans, start, stop = transitions.parts(-np.inf)
    path, score = _kernels.viterbi(em, trans, start, stop)
    if not np.isfinite(score):
        raise NoValidPath("every label path is masked out")
    return [int(p) for p in path], score


def marginals(emissions, transitions: TransitionMatrix, masked_value: float = -np.inf):
    """Per-position label marginals from forward-backward."""
    em = _emissions(emissions)
    trans, start, stop = transitions.parts(masked_value)
    alpha, log_z = _kernels.forward(em, trans, start, stop)
    beta = _kernels.backward(em, trans, stop)
    return np.exp(alpha + beta - log_z)


def crf_nll(emissions, transitions: TransitionMatrix, gold: Sequence[int],
            penalty: float = DEFAULT_PENALTY):
    """Negative log-likelihood of ``gold`` and its gradients.

    Returns ``(loss, d_emissions, d_transitions)``; ``d_transitions`` has the
    full ``(K+2, K+2)`` shape and is zero on masked entries.
    """
    em = _emissions(emissions)
    n, k = em.shape
    gold = [int(g) for g in gold]
    if len(gold) != n:
        raise ValueError(f"gold length {len(gold)} != {n} tokens")
    st, sp = k, k + 1
    m = transitions.mask
    if not (m[st, gold[0]] and m[gold[-1], sp]
            and all(m[gold[i - 1], gold[i]] for i in range(1, n))):
        raise InvalidGold("gold path uses a masked transition")

    trans, start, stop = transitions.parts(-abs(penalty))
    kern = _kernels
    alpha, log_z = kern.forward(em, trans, start, stop)
    beta = kern.backward(em, trans, stop)
    gold_score = start[gold[0]] + em[np.arange(n), gold].sum() + stop[gold[-1]]
    for i in range(1, n):
        gold_score += trans[gold[i - 1], gold[i]]
    loss = max(float(log_z - gold_score), 0.0)

    post = np.exp(alpha + beta - log_z)
    d_em = post.copy()
    d_em[np.arange(n), gold] -= 1.0

    d_tr = np.zeros_like(transitions.scores)
    d_tr[:k, :k] = kern.pair_marginals(alpha, beta, em, trans, log_z)
    for i in range(1, n):
        d_tr[gold[i - 1], gold[i]] -= 1.0
    d_tr[st, :k] = post[0]
    d_tr[st, gold[0]] -= 1.0
    d_tr[:k, sp] = post[n - 1]
    d_tr[gold[-1], sp] -= 1.0
    d_tr[~m] = 0.0
    return loss, d_em, d_tr


def softmax_nll(emissions, gold: Sequence[int]):
    """Token-level cross-entropy summed over positions, with its emission gradient."""
    em = _emissions(emissions)
    n = em.shape[0]
    shifted = em - em.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    idx = np.arange(n)
    loss = float(-log_probs[idx, gold].sum())
    d_em = np.exp(log_probs)
    d_em[idx, gold] -= 1.0
    return loss, d_em


def softmax_decode(emissions, scheme: LabelScheme | None = None):
    """Per-token argmax (lowest index on ties).

    With a scheme the labels are returned as strings after the BIO repair: an
    I that cannot continue the previous token's span becomes a B of its group.
    Without one, raw indices are returned.
    """
    from .labels import repair_bio

    em = _emissions(emissions)
    idx = [int(i) for i in np.argmax(em, axis=1)]
    if scheme is None:
        return idx
    return repair_bio(scheme.decode(idx))
