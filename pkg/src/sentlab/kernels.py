"""Per-sample inner loops, compiled with numba when available.

Every kernel has two implementations: a vectorized numpy version (``np_*``)
and an explicit-loop version (``loop_*``) that numba compiles. The public
names dispatch to the compiled loops unless ``SENTLAB_NUMBA=0`` is set in the
environment or numba cannot be imported, in which case the numpy versions are
used. Both paths agree to floating-point round-off; the tests compare them.
"""

from __future__ import annotations

import os

import numpy as np

_LOG_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def np_ema_update(emal, initialized, il, gamma):
    """In-place EMA update; uninitialized slots take ``il`` directly."""
    blended = gamma * emal + (1.0 - gamma) * il
    emal[:] = np.where(initialized, blended, il)
    initialized[:] = True


def np_instant_losses(probs, labels):
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, _LOG_FLOOR))


def np_history_entropies(hist, lengths, k):
    # hist rows are right-aligned: the valid entries are the last lengths[i] columns
    n, cap = hist.shape
    cols = np.arange(cap)[None, :]
    valid = cols >= (cap - lengths)[:, None]
    counts = np.zeros((n, k))
    for c in range(k):
        counts[:, c] = np.sum(valid & (hist == c), axis=1)
    p = counts / lengths[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, -p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    tau = np.log(k)
    he = terms.sum(axis=1) / tau
    current = hist[:, -1]
    ie = terms[np.arange(n), current] / tau
    return he, ie


def np_row_cosine(a, b):
    na = np.sqrt(np.sum(a * a, axis=1))
    nb = np.sqrt(np.sum(b * b, axis=1))
    dots = np.sum(a * b, axis=1)
    ok = (na > 0.0) & (nb > 0.0)
    out = np.zeros(len(a))
    out[ok] = dots[ok] / (na[ok] * nb[ok])
    return np.clip(out, -1.0, 1.0)


def np_threshold_counts(scores, positive, thresholds):
    """Selected count and true-positive count for ``score >= t`` at each t."""
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    pos = positive[order].astype(np.int64)
    # suffix sums: number of (positive) items at or after each sorted index
    tail_pos = np.concatenate([np.cumsum(pos[::-1])[::-1], [0]])
    first = np.searchsorted(s, thresholds, side="left")
    n_sel = len(s) - first
    tp = tail_pos[first]
    return n_sel.astype(np.int64), tp.astype(np.int64)


def np_sample_categorical(cdf, u):
    """Index of the first cdf entry exceeding u, per row."""
    k = cdf.shape[1]
    idx = np.sum(u[:, None] >= cdf, axis=1)
    return np.minimum(idx, k - 1).astype(np.int64)


def np_confusion(true, pred, k):
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (true, pred), 1)
    return out


# ---------------------------------------------------------------------------
# loop implementations (numba source)
# ---------------------------------------------------------------------------


def loop_ema_update(emal, initialized, il, gamma):
    for i in range(emal.shape[0]):
        if initialized[i]:
            emal[i] = gamma * emal[i] + (1.0 - gamma) * il[i]
        else:
            emal[i] = il[i]
            initialized[i] = True


def loop_instant_losses(probs, labels):
    n = labels.shape[0]
    out = np.empty(n)
    for i in range(n):
        p = probs[i, labels[i]]
        if p < 1e-12:
            p = 1e-12
        out[i] = -np.log(p)
    return out


def loop_history_entropies(hist, lengths, k):
    n, cap = hist.shape
    he = np.empty(n)
    ie = np.empty(n)
    tau = np.log(k)
    counts = np.zeros(k)
    for i in range(n):
        counts[:] = 0.0
        m = lengths[i]
        for j in range(cap - m, cap):
            counts[hist[i, j]] += 1.0
        total = 0.0
        current_term = 0.0
        current = hist[i, cap - 1]
        for c in range(k):
            p = counts[c] / m
            term = 0.0
            if p > 0.0:
                term = -p * np.log(p)
            total += term
            if c == current:
                current_term = term
        he[i] = total / tau
        ie[i] = current_term / tau
    return he, ie


def loop_row_cosine(a, b):
    n, d = a.shape
    out = np.zeros(n)
    for i in range(n):
        dot = 0.0
        na = 0.0
        nb = 0.0
        for j in range(d):
            dot += a[i, j] * b[i, j]
            na += a[i, j] * a[i, j]
            nb += b[i, j] * b[i, j]
        if na > 0.0 and nb > 0.0:
            v = dot / (np.sqrt(na) * np.sqrt(nb))
            if v > 1.0:
                v = 1.0
            elif v < -1.0:
                v = -1.0
            out[i] = v
    return out


def loop_threshold_counts(scores, positive, thresholds):
    n = scores.shape[0]
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    tail_pos = np.zeros(n + 1, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        tail_pos[i] = tail_pos[i + 1] + (1 if positive[order[i]] else 0)
    m = thresholds.shape[0]
    n_sel = np.empty(m, dtype=np.int64)
    tp = np.empty(m, dtype=np.int64)
    for j in range(m):
        first = np.searchsorted(s, thresholds[j])
        n_sel[j] = n - first
        tp[j] = tail_pos[first]
    return n_sel, tp


def loop_sample_categorical(cdf, u):
    n, k = cdf.shape
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        idx = 0
        for c in range(k):
            if u[i] >= cdf[i, c]:
                idx += 1
        out[i] = min(idx, k - 1)
    return out


def loop_confusion(true, pred, k):
    out = np.zeros((k, k), dtype=np.int64)
    for i in range(true.shape[0]):
        out[true[i], pred[i]] += 1
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_NAMES = (
    "ema_update",
    "instant_losses",
    "history_entropies",
    "row_cosine",
    "threshold_counts",
    "sample_categorical",
    "confusion",
)


def _numba_requested() -> bool:
    return os.environ.get("SENTLAB_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

compiled = {}
if NUMBA_AVAILABLE:
    for _name in _NAMES:
        compiled[_name] = numba.njit(cache=True)(globals()["loop_" + _name])

BACKEND = "numba" if (NUMBA_AVAILABLE and _numba_requested()) else "numpy"


def _pick(name):
    if BACKEND == "numba":
        return compiled[name]
    return globals()["np_" + name]


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _as_i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def ema_update(emal, initialized, il, gamma):
    _pick("ema_update")(emal, initialized, _as_f64(il), float(gamma))


def instant_losses(probs, labels):
    return _pick("instant_losses")(_as_f64(probs), _as_i64(labels))


def history_entropies(hist, lengths, k):
    return _pick("history_entropies")(_as_i64(hist), _as_i64(lengths), int(k))


def row_cosine(a, b):
    return _pick("row_cosine")(_as_f64(a), _as_f64(b))


def threshold_counts(scores, positive, thresholds):
    return _pick("threshold_counts")(
        _as_f64(scores), np.ascontiguousarray(positive, dtype=np.bool_), _as_f64(thresholds)
    )


def sample_categorical(cdf, u):
    return _pick("sample_categorical")(_as_f64(cdf), _as_f64(u))


def confusion(true, pred, k):
    return _pick("confusion")(_as_i64(true), _as_i64(pred), int(k))
