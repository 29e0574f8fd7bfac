"""Model-based per-sample signals used as input to the selection model.

The signal vector is ``[EMAL, IL, HE, IE, FLS]``:

* IL   instant cross-entropy loss of the observed label under the main model
* EMAL exponential moving average of IL across epochs
* HE   normalized entropy of the sample's prediction history
* IE   the history-entropy term of the current prediction alone
* FLS  cosine similarity of first and last hidden representations, min-max
       normalized over the population it is computed for

Two interfaces are provided. ``SampleTrace`` and the free functions operate on
one sample and follow the definitions literally; ``TraceBank`` keeps the same
state for a whole population in arrays and runs the per-sample loops through
``sentlab.kernels``.

The prediction history used for IE includes the current epoch's prediction
(it is the most recent entry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from sentlab import kernels
from sentlab.errors import ConfigError, ShapeError, StateError

SIGNAL_NAMES = ("EMAL", "IL", "HE", "IE", "FLS")
LOSS_FLOOR = 1e-12
DEFAULT_GAMMA = 0.9
DEFAULT_HISTORY = 12


@dataclass(frozen=True)
class SignalVector:
    emal: float
    il: float
    he: float
    ie: float
    fls: float

    def as_array(self) -> np.ndarray:
        return np.array([self.emal, self.il, self.he, self.ie, self.fls], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "SignalVector":
        v = [float(x) for x in values]
        if len(v) != 5:
            raise ShapeError(f"a signal vector has 5 entries, got {len(v)}")
        return cls(*v)


@dataclass
class SampleTrace:
    sample_id: str
    emal: float = 0.0
    emal_initialized: bool = False
    history: List[int] = field(default_factory=list)
    last_epoch: Optional[int] = None


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError("gamma", f"must lie in [0, 1], got {gamma}")


def _check_k(k: int) -> None:
    if k < 2:
        raise ConfigError("k", "entropy normalization needs at least 2 classes")


def instant_loss(probs, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < len(probs):
        raise IndexError(f"label {label} out of range for {len(probs)} classes")
    return -math.log(max(float(probs[label]), LOSS_FLOOR))


def update_emal(trace: SampleTrace, il: float, gamma: float) -> SampleTrace:
    _check_gamma(gamma)
    if not math.isfinite(il):
        raise ValueError(f"instant loss must be finite, got {il}")
    if trace.emal_initialized:
        trace.emal = gamma * trace.emal + (1.0 - gamma) * il
    else:
        trace.emal = il
        trace.emal_initialized = True
    return trace


def update_history(trace: SampleTrace, predicted: int, capacity: int) -> SampleTrace:
    if capacity < 1:
        raise ConfigError("history_capacity", "must be positive")
    trace.history.append(int(predicted))
    if len(trace.history) > capacity:
        del trace.history[: len(trace.history) - capacity]
    return trace


def empirical_distribution(history: Sequence[int], k: int) -> np.ndarray:
    if len(history) == 0:
        raise StateError("prediction history is empty; record a prediction first")
    counts = np.bincount(np.asarray(history, dtype=np.int64), minlength=k)
    if len(counts) > k:
        raise IndexError(f"history contains a class >= {k}")
    return counts / len(history)


def _entropy_term(p: float) -> float:
    return 0.0 if p <= 0.0 else -p * math.log(p)


def history_entropy(history: Sequence[int], k: int) -> float:
    _check_k(k)
    dist = empirical_distribution(history, k)
    return sum(_entropy_term(float(p)) for p in dist) / math.log(k)


def instant_entropy(history: Sequence[int], current_pred: int, k: int) -> float:
    _check_k(k)
    dist = empirical_distribution(history, k)
    return _entropy_term(float(dist[current_pred])) / math.log(k)


def fls_raw(first_hidden, last_hidden) -> float:
    a = np.asarray(first_hidden, dtype=np.float64)
    b = np.asarray(last_hidden, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hidden states differ in shape: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def normalize_fls(raw_values) -> np.ndarray:
    v = np.asarray(raw_values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot normalize an empty population")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def assemble_signals(
    trace: SampleTrace,
    probs,
    label: int,
    first_hidden,
    last_hidden,
    k: int,
    gamma: float = DEFAULT_GAMMA,
    epoch: Optional[int] = None,
) -> SignalVector:
    """Signal vector for one sample with the FLS slot still un-normalized.

    Updates the trace's EMAL as a side effect. Passing the same ``epoch`` twice
    raises StateError, so EMAL advances exactly once per epoch.
    """
    if not trace.history:
        raise StateError(f"trace {trace.sample_id!r} has no prediction history")
    if epoch is not None and trace.last_epoch == epoch:
        raise StateError(f"signals for {trace.sample_id!r} already assembled in epoch {epoch}")
    il = instant_loss(probs, label)
    he = history_entropy(trace.history, k)
    ie = instant_entropy(trace.history, trace.history[-1], k)
    fls = fls_raw(first_hidden, last_hidden)
    update_emal(trace, il, gamma)
    trace.last_epoch = epoch
    return SignalVector(emal=trace.emal, il=il, he=he, ie=ie, fls=fls)


class TraceBank:
    """Array-backed traces for a fixed population of samples.

    History rows are right-aligned: row ``i`` holds its ``lengths[i]`` most
    recent predictions in the last columns, newest last.
    """

    def __init__(self, n: int, k: int, capacity: int = DEFAULT_HISTORY, gamma: float = DEFAULT_GAMMA):
        _check_k(k)
        _check_gamma(gamma)
        if capacity < 1:
            raise ConfigError("history_capacity", "must be positive")
        self.n, self.k, self.capacity, self.gamma = n, k, capacity, gamma
        self.emal = np.zeros(n)
        self.initialized = np.zeros(n, dtype=np.bool_)
        self.hist = np.zeros((n, capacity), dtype=np.int64)
        self.lengths = np.zeros(n, dtype=np.int64)
        self.last_epoch: Optional[int] = None

    def observe(self, epoch: int, probs, labels) -> np.ndarray:
        """Record one epoch of predictions; returns the instant losses."""
        if self.last_epoch is not None and epoch == self.last_epoch:
            raise StateError(f"epoch {epoch} already observed")
        probs = np.asarray(probs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if probs.shape != (self.n, self.k) or labels.shape != (self.n,):
            raise ShapeError(f"expected probs ({self.n}, {self.k}) and labels ({self.n},)")
        il = kernels.instant_losses(probs, labels)
        kernels.ema_update(self.emal, self.initialized, il, self.gamma)
        preds = np.argmax(probs, axis=1)
        self.hist[:, :-1] = self.hist[:, 1:]
        self.hist[:, -1] = preds
        np.minimum(self.lengths + 1, self.capacity, out=self.lengths)
        self.last_epoch = epoch
        return il

    def entropies(self):
        if self.lengths.min(initial=1) < 1:
            raise StateError("some traces have no prediction history")
        return kernels.history_entropies(self.hist, self.lengths, self.k)

    def history(self, i: int) -> List[int]:
        return self.hist[i, self.capacity - self.lengths[i]:].tolist()


def signal_matrix(bank: TraceBank, il, first_hidden, last_hidden) -> np.ndarray:
    """(n, 5) signals for the bank's latest epoch; FLS column still raw."""
    he, ie = bank.entropies()
    if first_hidden is None:
        fls = np.zeros(bank.n)
    else:
        fls = kernels.row_cosine(first_hidden, last_hidden)
    return np.column_stack([bank.emal, il, he, ie, fls])


def mask_signals(sg: np.ndarray, drop: Sequence[str]) -> np.ndarray:
    out = np.array(sg, dtype=np.float64, copy=True)
    for name in drop:
        out[:, SIGNAL_NAMES.index(name)] = 0.0
    return out
