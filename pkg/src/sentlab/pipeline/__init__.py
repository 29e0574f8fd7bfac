"""Experiment orchestration: both training settings, baselines and sweeps."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import List, Sequence

import numpy as np

from sentlab.data import Dataset, Splits
from sentlab.errors import ConfigError
from sentlab.noise import corrupt
from sentlab.pipeline.common import evaluate, noise_transfer
from sentlab.pipeline.config import ArchSpec, RunConfig, derive_seed
from sentlab.pipeline.corruption import (
    run_corruption_supervised,
    run_corruption_thres,
    run_sent_corruption,
)
from sentlab.pipeline.reports import ExperimentReport, RoundReport, comparison_table
from sentlab.pipeline.selftrain import run_selftrain_baseline, run_sent_selftrain
from sentlab.signals import SIGNAL_NAMES

__all__ = [
    "ArchSpec",
    "ExperimentReport",
    "RoundReport",
    "RunConfig",
    "comparison_table",
    "evaluate",
    "feature_ablation",
    "few_shot_sweep",
    "noise_transfer",
    "run",
    "run_baseline",
    "run_sent_corruption",
    "run_many",
    "run_sent_selftrain",
    "stratified_subsample",
]


def _need(splits: Splits, *names):
    for name in names:
        part = getattr(splits, name)
        if part is None or len(part) == 0:
            raise ConfigError(name, f"this run needs a non-empty '{name}' split")


def run_baseline(config: RunConfig, splits: Splits) -> ExperimentReport:
    if config.setting == "corruption":
        _need(splits, "train", "eval")
        if config.mode == "supervised":
            return run_corruption_supervised(config, splits.train, splits.eval, splits.test)
        if config.mode == "self_train_thres":
            return run_corruption_thres(config, splits.train, splits.eval, splits.test)
        raise ConfigError("mode", f"{config.mode!r} is not a label-corruption baseline")
    _need(splits, "train", "eval")
    return run_selftrain_baseline(config, splits.train, splits.unlabeled, splits.eval, splits.test)


def run(config: RunConfig, splits: Splits, signal_sink=None) -> ExperimentReport:
    """Run ``config.mode`` on the splits (applying ``config.noise`` to train first, if set)."""
    corruption_info = None
    if config.noise is not None:
        if config.setting != "corruption":
            raise ConfigError("noise", "label noise is only injected in the corruption setting")
        _need(splits, "train")
        noisy, crep = corrupt(splits.train, config.noise)
        splits = Splits(noisy, splits.unlabeled, splits.select, splits.eval, splits.test)
        corruption_info = crep.to_dict()
    if config.mode == "sent_corruption":
        _need(splits, "train", "select", "eval")
        report = run_sent_corruption(config, splits.train, splits.select, splits.eval, splits.test, signal_sink)
    elif config.mode in ("sent_selftrain", "ours_plus_noisy"):
        _need(splits, "train", "unlabeled", "select", "eval")
        report = run_sent_selftrain(config, splits.train, splits.unlabeled, splits.select, splits.eval,
                                    splits.test, signal_sink)
    else:
        report = run_baseline(config, splits)
    report.corruption = corruption_info
    return report


def _run_job(args):
    config, splits = args
    return run(config, splits)


def run_many(jobs: Sequence, n_jobs: int = 1) -> List[ExperimentReport]:
    """Run (config, splits) pairs, optionally in worker processes; results keep input order."""
    jobs = list(jobs)
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_job, jobs))


def stratified_subsample(ds: Dataset, size: int, seed: int) -> Dataset:
    """``size`` samples keeping class proportions (largest-remainder rounding)."""
    k = ds.num_classes
    if size < k:
        raise ConfigError("sizes", f"size {size} is smaller than the number of classes ({k})")
    if size > len(ds):
        raise ConfigError("sizes", f"size {size} exceeds the labeled set ({len(ds)})")
    if size == len(ds):
        return ds
    rng = np.random.default_rng(seed)
    classes = [np.flatnonzero(ds.labels == c) for c in range(k)]
    exact = np.array([len(m) for m in classes], dtype=np.float64) * size / len(ds)
    take = np.floor(exact).astype(int)
    for c in np.argsort(-(exact - take), kind="stable")[: size - take.sum()]:
        take[c] += 1
    chosen = []
    for members, t in zip(classes, take):
        chosen.extend(members[rng.permutation(len(members))[:t]].tolist())
    return ds.subset(sorted(chosen))


FEW_SHOT_MODES = ("supervised", "self_train", "sent_selftrain")


def few_shot_sweep(config: RunConfig, splits: Splits, sizes: Sequence[int], n_jobs: int = 1):
    """One run per (size, mode); returns (reports, curve rows)."""
    _need(splits, "train", "unlabeled", "select", "eval")
    jobs, keys = [], []
    for size in sizes:
        labeled = stratified_subsample(splits.train, int(size), derive_seed(config.seed, "few_shot", int(size)))
        sub = Splits(labeled, splits.unlabeled, splits.select, splits.eval, splits.test)
        for mode in FEW_SHOT_MODES:
            jobs.append((config.replace(mode=mode, setting="selftrain", transfer="argmax"), sub))
            keys.append((int(size), mode))
    reports = run_many(jobs, n_jobs)
    rows = [
        {"size": size, "mode": mode, "seed": rep.seed,
         "final_test_metric": rep.final_test_metric, "final_eval_metric": rep.final_eval_metric}
        for (size, mode), rep in zip(keys, reports)
    ]
    return reports, rows


def feature_ablation(config: RunConfig, splits: Splits, drop_sets: Sequence[Sequence[str]], n_jobs: int = 1):
    """Re-run the configured selection pipeline with signals zeroed out; one row per drop set."""
    if config.mode not in ("sent_corruption", "sent_selftrain", "ours_plus_noisy"):
        raise ConfigError("mode", "feature ablation needs a selection mode")
    jobs = []
    for drop in drop_sets:
        drop = tuple(drop)
        if set(drop) - set(SIGNAL_NAMES):
            raise ConfigError("drop_signals", f"unknown signals in {list(drop)}")
        if set(drop) == set(SIGNAL_NAMES):
            raise ConfigError("drop_signals", "cannot drop all five signals")
        jobs.append((config.replace(drop_signals=drop), splits))
    reports = run_many(jobs, n_jobs)
    rows = []
    for drop, rep in zip(drop_sets, reports):
        km = rep.key_metrics
        rows.append({
            "drop": list(drop),
            "final_test_metric": rep.final_test_metric,
            "final_eval_metric": rep.final_eval_metric,
            "selection_precision": None if km is None else km.selection_precision,
            "selection_recall": None if km is None else km.selection_recall,
            "num_selected": None if km is None else km.num_selected,
        })
    return reports, rows
