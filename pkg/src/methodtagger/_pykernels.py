"""Pure numpy versions of the linear-chain kernels.

Same signatures and results as the compiled ``_ckernels`` module.  Transition
scores may contain ``-inf`` for forbidden moves.
"""
import numpy as np

NEG_INF = -np.inf


def _logsumexp_cols(x):
    # logsumexp over axis 0, safe when a whole column is -inf
    m = x.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(x - safe).sum(axis=0))
    return np.where(np.isneginf(m), NEG_INF, out)


def forward(em, trans, start, stop):
    n, k = em.shape
    alpha = np.empty((n, k))
    alpha[0] = start + em[0]
    for i in range(1, n):
        alpha[i] = _logsumexp_cols(alpha[i - 1][:, None] + trans) + em[i]
    last = alpha[n - 1] + stop
    log_z = _logsumexp_cols(last[:, None])[0]
    return alpha, float(log_z)


def backward(em, trans, stop):
    n, k = em.shape
    beta = np.empty((n, k))
    beta[n - 1] = stop
    for i in range(n - 2, -1, -1):
        beta[i] = _logsumexp_cols((trans + (em[i + 1] + beta[i + 1])[None, :]).T)
    return beta


def pair_marginals(alpha, beta, em, trans, log_z):
    n, k = em.shape
    out = np.zeros((k, k))
    for i in range(1, n):
        with np.errstate(invalid="ignore"):
            x = alpha[i - 1][:, None] + trans + (em[i] + beta[i])[None, :] - log_z
        out += np.exp(np.where(np.isnan(x), NEG_INF, x))
    return out


def viterbi(em, trans, start, stop):
    n, k = em.shape
    back = np.zeros((n, k), dtype=np.int64)
    score = start + em[0]
    for i in range(1, n):
        cand = score[:, None] + trans
        # argmax returns the first maximum: lowest previous label on ties
        back[i] = np.argmax(cand, axis=0)
        score = cand[back[i], np.arange(k)] + em[i]
    final = score + stop
    best = int(np.argmax(final))
    best_score = float(final[best])
    path = np.empty(n, dtype=np.int64)
    path[n - 1] = best
    for i in range(n - 1, 0, -1):
        path[i - 1] = back[i, path[i]]
    return path, best_score
