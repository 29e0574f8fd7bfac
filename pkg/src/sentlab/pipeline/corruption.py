"""Label-corruption setting: the selection-enhanced loop and its baselines."""

from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np

from sentlab.correction import batch_weights, mix, train_correction_model
from sentlab.data import Dataset
from sentlab.errors import ConfigError
from sentlab.nn import predict_proba, train_epoch, train_to_convergence
from sentlab.pipeline.common import (
    SignalSink,
    evaluate,
    learned_selection,
    new_main_model,
    noise_transfer,
    population_signals,
    signal_records,
)
from sentlab.pipeline.config import RunConfig, derive_seed
from sentlab.pipeline.reports import ExperimentReport, RoundReport, signal_means
from sentlab.selection import Standardizer, mask_metrics
from sentlab.signals import TraceBank

log = logging.getLogger(__name__)


def _finish(config, rounds, best_round, best_model, test, extras=None, **kw) -> ExperimentReport:
    best = next(r for r in rounds if r.round == best_round)
    key_round = best_round if best.selection_precision is not None else None
    return ExperimentReport(
        mode=config.mode,
        setting=config.setting,
        seed=config.seed,
        config=config.to_dict(),
        rounds=rounds,
        best_round=best_round,
        key_round=key_round,
        final_eval_metric=best.eval_metric,
        final_test_metric=None if test is None else evaluate(best_model, test, config.metric),
        extras=extras or {},
        **kw,
    )


def _track_best(state, round_index, metric, model):
    # strict improvement only, so ties keep the earlier round
    if state["metric"] is None or metric > state["metric"]:
        state.update(metric=metric, round=round_index, model=model.copy())


def run_sent_corruption(
    config: RunConfig,
    train: Dataset,
    select: Dataset,
    eval_set: Dataset,
    test: Optional[Dataset] = None,
    signal_sink: Optional[SignalSink] = None,
) -> ExperimentReport:
    """Noise transfer, then alternate selector training and main-model epochs on the selected subset."""
    if config.mode != "sent_corruption":
        raise ConfigError("mode", "run_sent_corruption needs mode 'sent_corruption'")
    k, dim = train.num_classes, train.dim
    n_tr, n_sel = len(train), len(select)

    # learn the noise, then carry it over to the select split
    noise_model = new_main_model(config, k, dim, "noise_model")
    noise_epochs = train_to_convergence(
        noise_model, train.features, train.labels,
        max_epochs=config.noise_max_epochs, tol=config.noise_tol,
        patience=config.noise_patience, batch_size=config.batch_size,
    )
    transfer = noise_transfer(noise_model, select, config.transfer, derive_seed(config.seed, "transfer"), train=train)
    select_noisy = transfer.dataset
    transfer_info = {
        "how": config.transfer,
        "select_noise_rate": transfer.noise_rate,
        "transferred_label_accuracy": transfer.transferred_accuracy,
        "noise_model_select_accuracy": transfer.argmax_accuracy,
        "noise_model_epochs": noise_epochs,
        "train_noise_rate": float(1.0 - np.mean(train.clean_mask())) if train.has_truth else None,
    }
    if transfer.transition is not None:
        transfer_info["transition"] = transfer.transition.tolist()

    model = new_main_model(config, k, dim, "main")
    for _ in range(config.pretrain_epochs):
        train_epoch(model, train.features, train.labels, batch_size=config.batch_size)

    pool_x = np.vstack([train.features, select_noisy.features])
    pool_ids = train.ids + select_noisy.ids
    pool_roles = ["train"] * n_tr + ["select"] * n_sel
    pool_truth = np.concatenate([train.true_labels, select_noisy.true_labels])
    bank = TraceBank(n_tr + n_sel, k, config.history_capacity, config.gamma)
    train_has_truth = train.has_truth

    eye = np.eye(k)
    cl_train = eye[train.labels]
    cl_select = eye[select_noisy.labels]
    work_train = train.labels.copy()
    work_select = select_noisy.labels.copy()

    rounds: List[RoundReport] = []
    best = {"metric": None, "round": None, "model": None}
    for epoch in range(config.pretrain_epochs, config.total_epochs):
        labels = np.concatenate([work_train, work_select])
        sg, probs = population_signals(model, bank, epoch, pool_x, labels, config.drop_signals)
        sg_tr, sg_sel = sg[:n_tr], sg[n_tr:]
        if signal_sink is not None:
            signal_sink(epoch, signal_records(epoch, pool_ids, pool_roles, sg, labels, pool_truth))

        targets = work_train
        if config.correction_enabled:
            transform = Standardizer.fit(sg_sel) if config.standardize_signals else Standardizer.identity(5)
            z_sel, z_tr = transform.transform(sg_sel), transform.transform(sg_tr)
            c_cfg = config.correction_model.build(5, 3, derive_seed(config.seed, "corrector", epoch))
            corrector = train_correction_model(
                z_sel, select_noisy.labels, probs[n_tr:], cl_select, select_noisy.true_labels,
                c_cfg, epochs=config.correction_epochs, batch_size=config.batch_size,
            )
            cl_train = mix(batch_weights(corrector, z_tr), eye[train.labels], probs[:n_tr], cl_train)
            cl_select = mix(batch_weights(corrector, z_sel), eye[select_noisy.labels], probs[n_tr:], cl_select)
            work_train = np.argmax(cl_train, axis=1)
            work_select = np.argmax(cl_select, axis=1)
            targets = cl_train

        sr = work_select == select_noisy.true_labels
        outcome = learned_selection(config, sg_sel, sr, sg_tr, ("corruption", epoch))
        chosen = np.flatnonzero(outcome.selected)
        train_epoch(model, train.features[chosen], targets[chosen], batch_size=config.batch_size)

        metric = evaluate(model, eval_set, config.metric)
        report = RoundReport(
            round=epoch,
            eval_metric=metric,
            num_selected=int(outcome.selected.sum()),
            pool_size=n_tr,
            threshold=outcome.threshold,
            signal_means_train=signal_means(sg_tr),
            signal_means_select=signal_means(sg_sel),
            flags=outcome.flags,
        )
        if train_has_truth:
            clean = work_train == train.true_labels
            m = mask_metrics(outcome.selected, clean)
            report.selection_precision = m.precision
            report.selection_recall = m.recall
            report.pool_clean_rate = float(clean.mean())
        rounds.append(report)
        _track_best(best, epoch, metric, model)
        log.debug("round %d eval=%.4f selected=%d", epoch, metric, report.num_selected)

    return _finish(config, rounds, best["round"], best["model"], test, noise_transfer=transfer_info)


def run_corruption_supervised(config: RunConfig, train: Dataset, eval_set: Dataset,
                              test: Optional[Dataset] = None) -> ExperimentReport:
    """Train on the full noisy set for ``total_epochs``, keeping the best epoch on eval."""
    model = new_main_model(config, train.num_classes, train.dim, "main")
    rounds: List[RoundReport] = []
    best = {"metric": None, "round": None, "model": None}
    for epoch in range(config.total_epochs):
        train_epoch(model, train.features, train.labels, batch_size=config.batch_size)
        metric = evaluate(model, eval_set, config.metric)
        rounds.append(RoundReport(round=epoch, eval_metric=metric, num_selected=len(train), pool_size=len(train)))
        _track_best(best, epoch, metric, model)
    return _finish(config, rounds, best["round"], best["model"], test)


def _corruption_threshold_run(config, train, eval_set, threshold):
    """Same schedule as the selection loop, but keep samples whose confidence is >= threshold."""
    model = new_main_model(config, train.num_classes, train.dim, "main")
    for _ in range(config.pretrain_epochs):
        train_epoch(model, train.features, train.labels, batch_size=config.batch_size)
    rounds: List[RoundReport] = []
    best = {"metric": None, "round": None, "model": None}
    idx = np.arange(len(train))
    for epoch in range(config.pretrain_epochs, config.total_epochs):
        probs = predict_proba(model, train.features)
        if config.thres_score == "observed_label":
            confidence = probs[idx, train.labels]
        else:
            confidence = probs.max(axis=1)
        selected = confidence >= threshold
        flags = []
        if not selected.any():
            flags.append("empty_selection_fallback")
            selected = np.ones(len(train), dtype=bool)
        chosen = np.flatnonzero(selected)
        train_epoch(model, train.features[chosen], train.labels[chosen], batch_size=config.batch_size)
        metric = evaluate(model, eval_set, config.metric)
        report = RoundReport(round=epoch, eval_metric=metric, num_selected=int(selected.sum()),
                             pool_size=len(train), threshold=float(threshold), flags=flags)
        if train.has_truth:
            clean = train.clean_mask()
            m = mask_metrics(selected, clean)
            report.selection_precision, report.selection_recall = m.precision, m.recall
            report.pool_clean_rate = float(clean.mean())
        rounds.append(report)
        _track_best(best, epoch, metric, model)
    return rounds, best


def run_corruption_thres(config: RunConfig, train: Dataset, eval_set: Dataset,
                         test: Optional[Dataset] = None) -> ExperimentReport:
    """Confidence filtering with the threshold grid-searched on the eval split."""
    chosen = None
    for t in config.thres_grid:
        rounds, best = _corruption_threshold_run(config, train, eval_set, t)
        if chosen is None or best["metric"] > chosen[2]["metric"]:
            chosen = (t, rounds, best)
    t, rounds, best = chosen
    return _finish(config, rounds, best["round"], best["model"], test,
                   extras={"chosen_threshold": t, "threshold_grid": list(config.thres_grid)})
