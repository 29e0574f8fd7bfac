"""Pieces shared by the label-corruption and self-training pipelines."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from sentlab import kernels
from sentlab.data import MISSING, Dataset
from sentlab.errors import DegenerateSelectionError, EvaluationError
from sentlab.nn import MlpModel, forward_batch, init_mlp, predict_batch, predict_proba
from sentlab.pipeline.config import RunConfig, derive_seed
from sentlab.selection import (
    Standardizer,
    calibrate_from_scores,
    clean_scores,
    fit_selector,
)
from sentlab.signals import SIGNAL_NAMES, TraceBank, mask_signals, normalize_fls, signal_matrix

SignalSink = Callable[[int, List[dict]], None]


def evaluate(model: MlpModel, dataset: Dataset, metric: str = "accuracy") -> float:
    if len(dataset) == 0:
        raise EvaluationError("cannot evaluate on an empty dataset")
    if not dataset.has_truth:
        raise EvaluationError("evaluation needs true labels for every sample")
    pred = predict_batch(model, dataset.features)
    truth = dataset.true_labels
    if metric == "accuracy":
        return float(np.mean(pred == truth))
    if metric == "micro_f1":
        k = dataset.num_classes
        conf = kernels.confusion(truth, pred, k)
        tp = float(np.trace(conf))
        fp = float(conf.sum(axis=0).sum() - tp)
        fn = float(conf.sum(axis=1).sum() - tp)
        denom = 2 * tp + fp + fn
        return 0.0 if denom == 0 else 2 * tp / denom
    raise EvaluationError(f"unknown metric {metric!r}")


def new_main_model(config: RunConfig, k: int, in_dim: int, *keys, dropout_rate: Optional[float] = None) -> MlpModel:
    cfg = config.main_model.build(in_dim, k, derive_seed(config.seed, *keys), dropout_rate=dropout_rate)
    return init_mlp(cfg)


@dataclass
class TransferResult:
    dataset: Dataset
    noise_rate: float
    transferred_accuracy: float
    argmax_accuracy: float
    transition: Optional[np.ndarray] = None


def estimate_transition(model: MlpModel, features, noisy_labels, k: int) -> np.ndarray:
    """Noise transition estimate from the noise-learning model's confident regions.

    Row ``c`` is the noisy-label frequency among training samples that the
    model assigns to ``c`` with at least the median confidence of that group.
    Classes the model never predicts fall back to its mean prediction over
    samples carrying that noisy label.
    """
    probs = predict_proba(model, features)
    pred = np.argmax(probs, axis=1)
    noisy_labels = np.asarray(noisy_labels, dtype=np.int64)
    t = np.zeros((k, k))
    for c in range(k):
        members = np.flatnonzero(pred == c)
        if len(members):
            conf = probs[members, c]
            core = members[conf >= np.median(conf)]
            t[c] = np.bincount(noisy_labels[core], minlength=k) / len(core)
        elif np.any(noisy_labels == c):
            t[c] = probs[noisy_labels == c].mean(axis=0)
        else:
            t[c, c] = 1.0
    return t


def _stratified_uniforms(n: int, rng: np.random.Generator) -> np.ndarray:
    # one draw per stratum of [0, 1), strata assigned to samples at random
    return (rng.permutation(n) + rng.random(n)) / max(n, 1)


def _draw_truth_first(dist, truth, u):
    """Sample each row of ``dist`` with the true class's interval placed first.

    Marginally every label follows its row; ordering the truth first makes the
    number of flips track the expected flip rate when ``u`` is stratified.
    """
    n, k = dist.shape
    order = np.empty((n, k), dtype=np.int64)
    base = np.arange(k)
    for i in range(n):
        order[i, 0] = truth[i]
        order[i, 1:] = base[base != truth[i]]
    reordered = np.take_along_axis(dist, order, axis=1)
    slot = kernels.sample_categorical(np.cumsum(reordered, axis=1), u)
    return order[np.arange(n), slot]


def noise_transfer(model: MlpModel, select: Dataset, how: str = "argmax", seed: int = 0,
                   train: Optional[Dataset] = None) -> TransferResult:
    """Relabel the select split with noise learned by ``model`` on the noisy train split.

    ``how="argmax"`` uses the model's predicted class. ``how="sample"`` draws
    each label from the model's predictive distribution. ``how="transition"``
    estimates a noise transition matrix from the model's confident regions on
    ``train`` and draws each select label from the row of its true class.
    True labels are kept alongside.
    """
    probs = predict_proba(model, select.features)
    argmax = np.argmax(probs, axis=1)
    truth = np.where(select.true_labels != MISSING, select.true_labels, select.labels)
    rng = np.random.default_rng(seed)
    transition = None
    if how == "argmax":
        labels = argmax
    elif how == "sample":
        labels = _draw_truth_first(probs, truth, _stratified_uniforms(len(select), rng))
    elif how == "transition":
        if train is None:
            raise ValueError("transition transfer needs the noisy train split")
        transition = estimate_transition(model, train.features, train.labels, select.num_classes)
        labels = _draw_truth_first(transition[truth], truth, _stratified_uniforms(len(select), rng))
    else:
        raise ValueError(f"unknown transfer mode {how!r}")
    out = select.with_labels(labels, truth)
    acc = float(np.mean(labels == truth))
    return TransferResult(out, 1.0 - acc, acc, float(np.mean(argmax == truth)), transition)


def population_signals(model: MlpModel, bank: TraceBank, epoch: int, features, labels,
                       drop=(), probs_override=None):
    """Observe one epoch on the population and return its (n, 5) signal matrix.

    FLS is min-max normalized over the whole population passed in.
    """
    cache = forward_batch(model, features, train_mode=False)
    probs = cache.probs if probs_override is None else probs_override
    il = bank.observe(epoch, probs, labels)
    sg = signal_matrix(bank, il, cache.hidden[0], cache.hidden[-1])
    sg[:, 4] = normalize_fls(sg[:, 4])
    return mask_signals(sg, drop), cache.probs


@dataclass
class SelectorOutcome:
    scores: np.ndarray          # P(clean) for the candidate pool
    threshold: Optional[float]
    selected: np.ndarray        # boolean mask over the pool
    flags: List[str]


def learned_selection(config: RunConfig, sg_select, sr, sg_pool, round_key) -> SelectorOutcome:
    """Train the selector on select-split signals and apply it to the pool."""
    flags: List[str] = []
    transform = Standardizer.fit(sg_select) if config.standardize_signals else Standardizer.identity(5)
    z_sel = transform.transform(sg_select)
    z_pool = transform.transform(sg_pool)
    sel_cfg = config.selection_model.build(5, 2, derive_seed(config.seed, "selector", *round_key))
    try:
        fit = fit_selector(
            z_sel, sr.astype(np.int64), sel_cfg,
            patience=config.selection_patience,
            holdout_fraction=config.selection_holdout,
            max_epochs=config.selection_max_epochs,
            batch_size=16,
        )
    except DegenerateSelectionError:
        flags.append("degenerate_selection_set")
        n = len(sg_pool)
        return SelectorOutcome(np.ones(n), None, np.ones(n, dtype=bool), flags)
    hold = fit.holdout_idx
    hold_scores = clean_scores(fit.model, z_sel[hold])
    threshold = calibrate_from_scores(hold_scores, sr[hold].astype(bool), config.threshold_policy)
    scores = clean_scores(fit.model, z_pool)
    selected = scores >= threshold
    if not selected.any():
        flags.append("empty_selection_fallback")
        selected = np.ones(len(scores), dtype=bool)
    return SelectorOutcome(scores, threshold, selected, flags)


def signal_records(round_index: int, ids, roles, sg, labels, true_labels) -> List[dict]:
    out = []
    for i, sid in enumerate(ids):
        out.append({
            "round": round_index,
            "sample_id": sid,
            "role": roles[i],
            "signals": {name: float(v) for name, v in zip(SIGNAL_NAMES, sg[i])},
            "label": int(labels[i]),
            "true_label": None if true_labels[i] == MISSING else int(true_labels[i]),
        })
    return out
