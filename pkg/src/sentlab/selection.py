"""Selection model: learns to tell clean labels from noisy ones from signal vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from sentlab import kernels
from sentlab.errors import ConfigError, ConsistencyError, DegenerateSelectionError
from sentlab.nn import MlpConfig, MlpModel, cross_entropy, init_mlp, predict_proba, train_epoch, as_targets
from sentlab.signals import SignalVector

SELECTOR_HIDDEN = 16


@dataclass
class SelectionSample:
    sample_id: str
    sg: np.ndarray
    sr: int


@dataclass(frozen=True)
class ThresholdPolicy:
    kind: str = "fx_optimal"
    x_value: float = 0.5
    grid_resolution: int = 100

    def __post_init__(self):
        if self.kind not in ("argmax", "fx_optimal"):
            raise ConfigError("threshold_policy.kind", f"unknown kind {self.kind!r}")
        if not self.x_value > 0.0:
            raise ConfigError("threshold_policy.x_value", "must be positive")
        if self.grid_resolution < 1:
            raise ConfigError("threshold_policy.grid_resolution", "must be positive")


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, matrix) -> "Standardizer":
        m = np.asarray(matrix, dtype=np.float64)
        mean = m.mean(axis=0)
        std = m.std(axis=0)
        return cls(mean=mean, scale=np.where(std > 0.0, std, 1.0))

    @classmethod
    def identity(cls, dim: int = 5) -> "Standardizer":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))

    def transform(self, matrix) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mean) / self.scale


@dataclass
class SelectionMetrics:
    precision: float
    recall: float
    count: int
    empty: bool = False


def default_selector_config(seed: int = 0, hidden: int = SELECTOR_HIDDEN, outputs: int = 2) -> MlpConfig:
    return MlpConfig(layer_sizes=[5, hidden, outputs], activation="relu", seed=seed, learning_rate=0.1)


def _as_matrix(signals) -> np.ndarray:
    if isinstance(signals, SignalVector):
        return signals.as_array()
    return np.asarray(signals, dtype=np.float64)


def build_selection_set(
    select_samples: Iterable[Tuple[str, int, int]],
    signals: Mapping[str, object],
    standardize: bool = True,
) -> Tuple[List[SelectionSample], Standardizer]:
    """Pair each select sample's signals with its cleanliness target.

    Returns the samples and the standardization fitted on them, which is the
    transform to reuse for training-set signals.
    """
    rows, meta = [], []
    for sample_id, noisy, true in select_samples:
        if sample_id not in signals:
            raise ConsistencyError(sample_id)
        rows.append(_as_matrix(signals[sample_id]))
        meta.append((sample_id, int(noisy == true)))
    matrix = np.vstack(rows) if rows else np.zeros((0, 5))
    transform = Standardizer.fit(matrix) if (standardize and len(rows)) else Standardizer.identity(5)
    z = transform.transform(matrix)
    return [SelectionSample(sid, z[i], sr) for i, (sid, sr) in enumerate(meta)], transform


def stratified_holdout(labels, fraction: float, rng: np.random.Generator):
    """Split indices into (fit, holdout), keeping class proportions.

    Each class with at least two members contributes at least one holdout item.
    """
    labels = np.asarray(labels)
    fit_idx, hold_idx = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        n_hold = int(round(fraction * len(members)))
        if len(members) >= 2:
            n_hold = min(max(n_hold, 1), len(members) - 1)
        else:
            n_hold = 0
        hold_idx.extend(members[:n_hold].tolist())
        fit_idx.extend(members[n_hold:].tolist())
    return np.array(sorted(fit_idx), dtype=np.int64), np.array(sorted(hold_idx), dtype=np.int64)


@dataclass
class SelectorFit:
    model: MlpModel
    fit_idx: np.ndarray
    holdout_idx: np.ndarray
    epochs: int


def fit_selector(
    features,
    targets,
    config: MlpConfig,
    patience: int = 10,
    holdout_fraction: float = 0.2,
    max_epochs: int = 300,
    batch_size: int = 16,
) -> SelectorFit:
    """Train a classifier with early stopping on a stratified holdout.

    ``targets`` are class indices. The parameters with the lowest holdout loss
    are restored before returning.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateSelectionError("selection set contains a single class")
    model = init_mlp(config)
    fit_idx, hold_idx = stratified_holdout(y, holdout_fraction, model.rng)
    if len(hold_idx) == 0:
        hold_idx = fit_idx
    hold_t = as_targets(y[hold_idx], config.num_classes)
    best_loss = cross_entropy(predict_proba(model, x[hold_idx]), hold_t)
    best = [p.copy() for p in model.parameters()]
    stale = 0
    epochs = 0
    for epochs in range(1, max_epochs + 1):
        train_epoch(model, x[fit_idx], y[fit_idx], batch_size=batch_size)
        loss = cross_entropy(predict_proba(model, x[hold_idx]), hold_t)
        if loss < best_loss:
            best_loss = loss
            best = [p.copy() for p in model.parameters()]
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    model.load_parameters(best)
    return SelectorFit(model, fit_idx, hold_idx, epochs)


def train_selection_model(samples: Sequence[SelectionSample], config: MlpConfig, patience: int = 10) -> MlpModel:
    x = np.vstack([s.sg for s in samples]) if samples else np.zeros((0, 5))
    y = np.array([s.sr for s in samples], dtype=np.int64)
    return fit_selector(x, y, config, patience=patience).model


def clean_scores(model: MlpModel, matrix) -> np.ndarray:
    """P(clean) for each row; the clean class is output index 1."""
    return predict_proba(model, np.atleast_2d(np.asarray(matrix, dtype=np.float64)))[:, 1]


def fx_score(precision: float, recall: float, x: float) -> float:
    x2 = x * x
    denom = x2 * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + x2) * precision * recall / denom


def _precision_recall(n_sel, tp, n_pos):
    n_sel = np.asarray(n_sel, dtype=np.float64)
    tp = np.asarray(tp, dtype=np.float64)
    precision = np.where(n_sel > 0, tp / np.maximum(n_sel, 1.0), 1.0)
    recall = tp / n_pos if n_pos > 0 else np.ones_like(tp)
    return precision, recall


def candidate_thresholds(scores, grid_resolution: int) -> np.ndarray:
    grid = np.linspace(0.0, 1.0, grid_resolution + 1)
    return np.unique(np.concatenate([grid, np.asarray(scores, dtype=np.float64)]))


def fx_curve(scores, clean, x: float, grid_resolution: int = 100):
    """(thresholds, precision, recall, fx) over every candidate threshold, ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    clean = np.asarray(clean, dtype=bool)
    thresholds = candidate_thresholds(scores, grid_resolution)
    n_sel, tp = kernels.threshold_counts(scores, clean, thresholds)
    precision, recall = _precision_recall(n_sel, tp, int(clean.sum()))
    fx = np.array([fx_score(p, r, x) for p, r in zip(precision, recall)])
    return thresholds, precision, recall, fx


def calibrate_from_scores(scores, clean, policy: ThresholdPolicy) -> float:
    if policy.kind == "argmax":
        return 0.5
    thresholds, _, _, fx = fx_curve(scores, clean, policy.x_value, policy.grid_resolution)
    # argmax picks the first maximum, i.e. the smallest threshold among ties
    return float(thresholds[int(np.argmax(fx))])


def calibrate_threshold(model: MlpModel, eval_samples: Sequence[SelectionSample], policy: ThresholdPolicy) -> float:
    if policy.kind == "argmax":
        return 0.5
    if not eval_samples:
        raise ValueError("threshold calibration needs at least one sample")
    scores = clean_scores(model, np.vstack([s.sg for s in eval_samples]))
    clean = np.array([s.sr == 1 for s in eval_samples])
    return calibrate_from_scores(scores, clean, policy)


def calibration_report(scores, clean, policy: ThresholdPolicy) -> dict:
    thresholds, precision, recall, fx = fx_curve(scores, clean, policy.x_value, policy.grid_resolution)
    return {
        "policy": {"kind": policy.kind, "x_value": policy.x_value, "grid_resolution": policy.grid_resolution},
        "threshold": calibrate_from_scores(scores, clean, policy),
        "curve": [
            {"threshold": float(t), "precision": float(p), "recall": float(r), "fx": float(f)}
            for t, p, r, f in zip(thresholds, precision, recall, fx)
        ],
    }


def select_subset(model: MlpModel, train_signals: Mapping[str, object], threshold: float) -> set:
    ids = list(train_signals)
    if not ids:
        return set()
    scores = clean_scores(model, np.vstack([_as_matrix(train_signals[i]) for i in ids]))
    return {sid for sid, s in zip(ids, scores) if s >= threshold}


def selection_metrics(selected: Iterable, cleanliness: Mapping[object, bool]) -> SelectionMetrics:
    selected = set(selected)
    clean = {sid for sid, ok in cleanliness.items() if ok}
    hits = len(selected & clean)
    empty = not selected
    precision = 1.0 if empty else hits / len(selected)
    recall = hits / len(clean) if clean else 1.0
    return SelectionMetrics(precision=precision, recall=recall, count=len(selected), empty=empty)


def mask_metrics(selected_mask, clean_mask) -> SelectionMetrics:
    """Same as ``selection_metrics`` for boolean masks over one pool."""
    sel = np.asarray(selected_mask, dtype=bool)
    clean = np.asarray(clean_mask, dtype=bool)
    hits = int(np.sum(sel & clean))
    count = int(sel.sum())
    n_clean = int(clean.sum())
    return SelectionMetrics(
        precision=1.0 if count == 0 else hits / count,
        recall=hits / n_clean if n_clean else 1.0,
        count=count,
        empty=count == 0,
    )
