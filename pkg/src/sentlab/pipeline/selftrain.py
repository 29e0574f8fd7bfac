"""Self-training setting: teacher/student rounds with learned, full or confidence-based selection."""

from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np

from sentlab.data import MISSING, Dataset
from sentlab.errors import ConfigError
from sentlab.nn import MlpModel, forward_batch, predict_proba, train_epoch
from sentlab.pipeline.common import (
    SignalSink,
    evaluate,
    learned_selection,
    new_main_model,
    signal_records,
)
from sentlab.pipeline.config import RunConfig
from sentlab.pipeline.reports import ExperimentReport, RoundReport, signal_means
from sentlab.selection import mask_metrics
from sentlab.signals import TraceBank, mask_signals, normalize_fls, signal_matrix

log = logging.getLogger(__name__)


def _train_recording(model: MlpModel, x, y, pool_x, config: RunConfig, train_mode: bool) -> List[np.ndarray]:
    """Train to a loss plateau, recording pool probabilities after every epoch."""
    recorded = []
    best_loss = np.inf
    stale = 0
    for _ in range(config.round_max_epochs):
        loss = train_epoch(model, x, y, batch_size=config.batch_size, train_mode=train_mode)
        recorded.append(predict_proba(model, pool_x))
        if best_loss - loss < config.noise_tol:
            stale += 1
            if stale >= config.noise_patience:
                break
        else:
            stale = 0
        best_loss = min(best_loss, loss)
    return recorded


def _replay_signals(config: RunConfig, model: MlpModel, recorded, pool_x, labels, k):
    """Signals for the pool from a finished model's per-epoch predictions.

    Labels are the final pseudo labels, so EMAL tracks the loss of the label
    that is actually being judged across the model's training epochs.
    """
    bank = TraceBank(len(pool_x), k, config.history_capacity, config.gamma)
    il = None
    for epoch, probs in enumerate(recorded):
        il = bank.observe(epoch, probs, labels)
    cache = forward_batch(model, pool_x)
    sg = signal_matrix(bank, il, cache.hidden[0], cache.hidden[-1])
    sg[:, 4] = normalize_fls(sg[:, 4])
    return mask_signals(sg, config.drop_signals)


def selftrain_loop(
    config: RunConfig,
    labeled: Dataset,
    unlabeled: Dataset,
    select: Optional[Dataset],
    eval_set: Dataset,
    test: Optional[Dataset],
    selector: str,
    threshold: Optional[float] = None,
    student_dropout: float = 0.0,
    signal_sink: Optional[SignalSink] = None,
):
    """Run teacher/student rounds; returns (rounds, best-state dict).

    ``selector`` is ``"learned"``, ``"all"`` or ``"confidence"``.
    """
    k, dim = labeled.num_classes, labeled.dim
    n_u = len(unlabeled)
    if selector == "learned":
        if select is None or len(select) == 0:
            raise ConfigError("select", "learned selection needs a select split")
        pool_x = np.vstack([unlabeled.features, select.features])
    else:
        pool_x = unlabeled.features
    u_truth_known = bool(n_u) and bool(np.all(unlabeled.true_labels != MISSING))

    teacher = new_main_model(config, k, dim, "model", 0)
    recorded = _train_recording(teacher, labeled.features, labeled.labels, pool_x, config, train_mode=True)
    rounds = [RoundReport(round=0, eval_metric=evaluate(teacher, eval_set, config.metric),
                          num_selected=0, pool_size=n_u)]
    best = {"metric": rounds[0].eval_metric, "round": 0, "model": teacher.copy()}

    for r in range(1, config.rounds + 1):
        probs = recorded[-1]
        pseudo = np.argmax(probs, axis=1)
        pseudo_u = pseudo[:n_u]
        flags: List[str] = []
        threshold_used = threshold
        sg_u = sg_sel = None
        if selector == "learned":
            sg = _replay_signals(config, teacher, recorded, pool_x, pseudo, k)
            sg_u, sg_sel = sg[:n_u], sg[n_u:]
            sr = pseudo[n_u:] == select.true_labels
            if signal_sink is not None:
                ids = unlabeled.ids + select.ids
                roles = ["unlabeled"] * n_u + ["select"] * len(select)
                truth = np.concatenate([unlabeled.true_labels, select.true_labels])
                signal_sink(r, signal_records(r, ids, roles, sg, pseudo, truth))
            outcome = learned_selection(config, sg_sel, sr, sg_u, ("selftrain", r))
            selected = outcome.selected
            threshold_used = outcome.threshold
            flags.extend(outcome.flags)
        elif selector == "all":
            selected = np.ones(n_u, dtype=bool)
        elif selector == "confidence":
            selected = probs[:n_u].max(axis=1) >= threshold
        else:
            raise ValueError(f"unknown selector {selector!r}")

        chosen = np.flatnonzero(selected)
        x = np.vstack([labeled.features, unlabeled.features[chosen]])
        y = np.concatenate([labeled.labels, pseudo_u[chosen]])
        if config.student_init == "continue":
            student = teacher.copy()
            student.config.dropout_rate = student_dropout
        else:
            student = new_main_model(config, k, dim, "model", r, dropout_rate=student_dropout)
        recorded = _train_recording(student, x, y, pool_x, config, train_mode=True)
        metric = evaluate(student, eval_set, config.metric)

        report = RoundReport(
            round=r,
            eval_metric=metric,
            num_selected=int(selected.sum()),
            pool_size=n_u,
            threshold=None if threshold_used is None else float(threshold_used),
            flags=flags,
        )
        if sg_u is not None:
            report.signal_means_train = signal_means(sg_u)
            report.signal_means_select = signal_means(sg_sel)
        if u_truth_known:
            correct = pseudo_u == unlabeled.true_labels
            m = mask_metrics(selected, correct)
            report.pseudo_label_accuracy = float(correct.mean())
            report.pool_clean_rate = report.pseudo_label_accuracy
            report.selection_precision, report.selection_recall = m.precision, m.recall
        rounds.append(report)
        if metric > best["metric"]:
            best.update(metric=metric, round=r, model=student.copy())
        log.debug("round %d eval=%.4f selected=%d", r, metric, report.num_selected)
        teacher = student
    return rounds, best


def _report(config, rounds, best, test, extras=None) -> ExperimentReport:
    selecting = [r for r in rounds if r.round > 0]
    key_round = None
    if selecting:
        # first maximum, so ties keep the earlier round
        key_round = max(selecting, key=lambda r: (r.eval_metric, -r.round)).round
    return ExperimentReport(
        mode=config.mode,
        setting=config.setting,
        seed=config.seed,
        config=config.to_dict(),
        rounds=rounds,
        best_round=best["round"],
        key_round=key_round,
        final_eval_metric=best["metric"],
        final_test_metric=None if test is None else evaluate(best["model"], test, config.metric),
        extras=extras or {},
    )


def run_sent_selftrain(config: RunConfig, labeled: Dataset, unlabeled: Dataset, select: Dataset,
                       eval_set: Dataset, test: Optional[Dataset] = None,
                       signal_sink: Optional[SignalSink] = None) -> ExperimentReport:
    if config.mode not in ("sent_selftrain", "ours_plus_noisy"):
        raise ConfigError("mode", "run_sent_selftrain needs mode 'sent_selftrain' or 'ours_plus_noisy'")
    dropout = config.student_dropout if config.mode == "ours_plus_noisy" else 0.0
    rounds, best = selftrain_loop(config, labeled, unlabeled, select, eval_set, test, "learned",
                                  student_dropout=dropout, signal_sink=signal_sink)
    return _report(config, rounds, best, test)


def run_selftrain_baseline(config: RunConfig, labeled: Dataset, unlabeled: Optional[Dataset],
                           eval_set: Dataset, test: Optional[Dataset] = None) -> ExperimentReport:
    mode = config.mode
    if mode == "supervised":
        # the pool is only scored, never trained on, when there are no rounds
        pool = unlabeled if unlabeled is not None else labeled.subset([])
        rounds, best = selftrain_loop(config.replace(rounds=0), labeled, pool, None, eval_set, test, "all")
        return _report(config, rounds, best, test)
    if unlabeled is None or len(unlabeled) == 0:
        raise ConfigError("unlabeled", f"mode {mode!r} needs an unlabeled pool")
    if mode == "self_train":
        rounds, best = selftrain_loop(config, labeled, unlabeled, None, eval_set, test, "all")
        return _report(config, rounds, best, test)
    if mode == "noisy_student":
        rounds, best = selftrain_loop(config, labeled, unlabeled, None, eval_set, test, "all",
                                      student_dropout=config.student_dropout)
        return _report(config, rounds, best, test)
    if mode == "self_train_thres":
        chosen = None
        for t in config.thres_grid:
            rounds, best = selftrain_loop(config, labeled, unlabeled, None, eval_set, test, "confidence", threshold=t)
            if chosen is None or best["metric"] > chosen[2]["metric"]:
                chosen = (t, rounds, best)
        t, rounds, best = chosen
        return _report(config, rounds, best, test,
                       extras={"chosen_threshold": t, "threshold_grid": list(config.thres_grid)})
    raise ConfigError("mode", f"{mode!r} is not a self-training baseline")

