"""Command-line entry point.

Every verb prints exactly one JSON summary line on stdout and logs to stderr.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from sentlab import __version__
from sentlab.data import (
    MISSING,
    DatasetSchema,
    Splits,
    VectorizerSpec,
    atomic_write_text,
    concat,
    load_dataset,
    make_benchmark,
    save_dataset,
    split_dev,
)
from sentlab.errors import ConfigError, ParseError, SchemaError, SentlabError
from sentlab.noise import NoiseSpec, corrupt
from sentlab.pipeline import feature_ablation, few_shot_sweep, run
from sentlab.pipeline.config import RunConfig, derive_seed
from sentlab.pipeline.reports import (
    FEW_SHOT_CSV_COLUMNS,
    FX_CSV_COLUMNS,
    comparison_table,
    csv_text,
    load_report,
    write_report,
)
from sentlab.selection import (
    Standardizer,
    ThresholdPolicy,
    calibrate_from_scores,
    clean_scores,
    fit_selector,
    fx_curve,
)
from sentlab.signals import SIGNAL_NAMES

log = logging.getLogger("sentlab")

USAGE_ERRORS = (ConfigError, SchemaError, ParseError, FileNotFoundError, IsADirectoryError)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError("config", f"{p}: expected a JSON object")
    return data


def _load_config(args, **overrides) -> RunConfig:
    data = _read_json(args.config) if args.config else {}
    if getattr(args, "mode", None):
        data["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
        if isinstance(data.get("noise"), dict):
            data["noise"] = dict(data["noise"], seed=args.seed)
    data.update(overrides)
    return RunConfig.from_dict(data)


def _schema(args) -> DatasetSchema:
    return DatasetSchema(num_classes=args.num_classes, vectorizer=VectorizerSpec(dim=args.hash_dim))


def _load_splits(args, seed: int) -> Splits:
    splits = Splits.from_dataset(load_dataset(args.data, _schema(args)))
    if splits.select is None and splits.eval is not None:
        # a single dev split is halved into select and eval
        log.info("no 'select' records; splitting the eval records in half")
        select, evalset = split_dev(splits.eval, derive_seed(seed, "dev_split"))
        splits = Splits(splits.train, splits.unlabeled, select, evalset, splits.test)
    return splits


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_meta(out: Path, command: str, started: float) -> None:
    # kept apart from report.json so reports stay byte-identical across reruns
    _write_json(out / "run_meta.json", {
        "command": command,
        "version": __version__,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    })


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_make_blobs(args) -> dict:
    splits = make_benchmark(args.seed, n_train=args.n_train, n_dev=args.n_dev, n_test=args.n_test,
                            n_unlabeled=args.n_unlabeled, k=args.classes, separation=args.separation)
    ds = concat([d for d in (splits.train, splits.unlabeled, splits.select, splits.eval, splits.test)
                 if d is not None])
    save_dataset(ds, args.out)
    return {"command": "make-blobs", "output": str(args.out), "samples": len(ds)}


def cmd_corrupt(args) -> dict:
    data = _read_json(args.config)
    spec = data.get("noise", data)
    if not isinstance(spec, dict):
        raise ConfigError("noise", "expected a noise specification object")
    if args.seed is not None:
        spec = dict(spec, seed=args.seed)
    noise = NoiseSpec(**spec)
    ds = load_dataset(args.data, _schema(args))
    # records without an observed label (the unlabeled pool) are never corrupted
    eligible = ds.labels != MISSING
    if args.train_only:
        eligible &= np.asarray(ds.roles) == "train"
    target = np.flatnonzero(eligible)
    if len(target) == 0:
        raise ConfigError("data", "no records to corrupt")
    noisy, report = corrupt(ds.subset(target), noise)
    labels, truth = ds.labels.copy(), ds.true_labels.copy()
    labels[target] = noisy.labels
    truth[target] = noisy.true_labels
    out = _out_dir(args.out)
    save_dataset(ds.with_labels(labels, truth), out / "data.jsonl")
    _write_json(out / "corruption.json", {"noise": noise.to_dict(), "report": report.to_dict()})
    return {"command": "corrupt", "output": str(out), "achieved_rate": report.achieved_rate,
            "corrupted": int(len(target))}


def cmd_run(args) -> dict:
    started = time.perf_counter()
    config = _load_config(args)
    splits = _load_splits(args, config.seed)
    dump: List[dict] = []
    sink = (lambda _r, records: dump.extend(records)) if args.dump_signals else None
    report = run(config, splits, signal_sink=sink)
    out = _out_dir(args.out)
    write_report(report, out)
    if args.dump_signals:
        atomic_write_text(out / "signals.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in dump))
    _write_meta(out, "run", started)
    return {"command": "run", "output": str(out), **report.summary()}


def _select_records(path: Path, round_index: Optional[int]):
    if not path.is_file():
        raise FileNotFoundError(f"no signal dump at {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None
    select = [r for r in records if r.get("role") == "select" and r.get("true_label") is not None]
    if not select:
        raise ConfigError("signals", "the dump holds no select records with true labels")
    rounds = sorted({r["round"] for r in select})
    chosen = rounds[-1] if round_index is None else round_index
    if chosen not in rounds:
        raise ConfigError("round", f"round {chosen} is not in the dump (available: {rounds})")
    select = [r for r in select if r["round"] == chosen]
    sg = np.array([[r["signals"][name] for name in SIGNAL_NAMES] for r in select], dtype=np.float64)
    sr = np.array([r["label"] == r["true_label"] for r in select], dtype=bool)
    return chosen, sg, sr


def sweep_threshold(config: RunConfig, sg, sr, x_values, round_index: int):
    """Retrain the selector on dumped select signals and return (rows, best threshold per X).

    Curves are computed on the selector's holdout, the same split used to
    calibrate thresholds during a run.
    """
    transform = Standardizer.fit(sg) if config.standardize_signals else Standardizer.identity(5)
    z = transform.transform(sg)
    sel_cfg = config.selection_model.build(5, 2, derive_seed(config.seed, "selector", "sweep", round_index))
    fit = fit_selector(z, sr.astype(np.int64), sel_cfg, patience=config.selection_patience,
                       holdout_fraction=config.selection_holdout, max_epochs=config.selection_max_epochs,
                       batch_size=16)
    scores = clean_scores(fit.model, z[fit.holdout_idx])
    clean = sr[fit.holdout_idx]
    grid = config.threshold_policy.grid_resolution
    rows, best = [], {}
    for x in x_values:
        thresholds, precision, recall, fx = fx_curve(scores, clean, x, grid)
        for t, p, r, f in zip(thresholds, precision, recall, fx):
            rows.append({"x": x, "threshold": float(t), "precision": float(p), "recall": float(r), "fx": float(f)})
        t_best = calibrate_from_scores(scores, clean, ThresholdPolicy("fx_optimal", x, grid))
        i = int(np.searchsorted(thresholds, t_best))
        best[str(x)] = {"threshold": t_best, "precision": float(precision[i]),
                        "recall": float(recall[i]), "fx": float(fx[i])}
    return rows, best


def cmd_sweep_threshold(args) -> dict:
    config = _load_config(args)
    chosen, sg, sr = _select_records(Path(args.signals), args.round)
    rows, best = sweep_threshold(config, sg, sr, [float(x) for x in args.x], chosen)
    out = _out_dir(args.out)
    atomic_write_text(out / "fx_curve.csv", csv_text(FX_CSV_COLUMNS, rows))
    _write_json(out / "fx_best.json", {"round": chosen, "best": best})
    return {"command": "sweep-threshold", "output": str(out), "round": chosen, "best": best}


def cmd_few_shot(args) -> dict:
    started = time.perf_counter()
    config = _load_config(args, mode="sent_selftrain", setting="selftrain")
    splits = _load_splits(args, config.seed)
    reports, rows = few_shot_sweep(config, splits, args.sizes, n_jobs=args.jobs)
    out = _out_dir(args.out)
    for rep, row in zip(reports, rows):
        write_report(rep, out / "runs" / f"{row['mode']}_size{row['size']}")
    atomic_write_text(out / "few_shot.csv", csv_text(FEW_SHOT_CSV_COLUMNS, rows))
    _write_meta(out, "few-shot", started)
    return {"command": "few-shot", "output": str(out), "runs": len(reports), "curve": rows}


def _parse_drop(text: str):
    names = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [n for n in names if n not in SIGNAL_NAMES]
    if unknown:
        raise ConfigError("drop", f"unknown signal names {unknown}; expected a subset of {list(SIGNAL_NAMES)}")
    return tuple(names)


def cmd_ablate(args) -> dict:
    started = time.perf_counter()
    config = _load_config(args)
    splits = _load_splits(args, config.seed)
    if args.drop is None:
        drop_sets = [()] + [(name,) for name in SIGNAL_NAMES]
    else:
        drop_sets = [_parse_drop(d) for d in args.drop]
    reports, rows = feature_ablation(config, splits, drop_sets, n_jobs=args.jobs)
    labels = ["none" if not d else "-" + "-".join(d) for d in drop_sets]
    out = _out_dir(args.out)
    for label, rep in zip(labels, reports):
        write_report(rep, out / "runs" / label)
    table_rows, markdown = comparison_table(reports, labels)
    for r in table_rows:
        r["drop"] = [] if r["run"] == "none" else r["run"][1:].split("-")
    _write_json(out / "ablation.json", table_rows)
    atomic_write_text(out / "ablation.md", markdown)
    _write_meta(out, "ablate", started)
    return {"command": "ablate", "output": str(out), "rows": table_rows}


def cmd_report(args) -> dict:
    reports, labels = [], []
    for path in args.reports:
        p = Path(path)
        if p.is_dir():
            p = p / "report.json"
        if not p.is_file():
            raise FileNotFoundError(f"no report at {p}")
        try:
            reports.append(load_report(p))
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise SchemaError(f"{p}: not an experiment report ({exc})") from None
        labels.append(str(path))
    rows, markdown = comparison_table(reports, labels)
    out = _out_dir(args.out)
    _write_json(out / "comparison.json", rows)
    atomic_write_text(out / "comparison.md", markdown)
    return {"command": "report", "output": str(out), "rows": rows}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _data_flags(p, required=True):
    p.add_argument("--data", required=required, help="JSONL dataset with per-record roles")
    p.add_argument("--num-classes", type=int, default=None, help="declare the class count instead of inferring it")
    p.add_argument("--hash-dim", type=int, default=1024, help="feature-hashing width for text records")


def _run_flags(p, with_mode=True):
    p.add_argument("--config", help="RunConfig JSON (defaults are used for missing keys)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    if with_mode:
        p.add_argument("--mode", default=None, help="override the config mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sentlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("make-blobs", help="write the synthetic Gaussian-blob benchmark as JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--n-unlabeled", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--separation", type=float, default=3.0)
    p.set_defaults(func=cmd_make_blobs)

    p = sub.add_parser("corrupt", help="inject label noise; writes data.jsonl and corruption.json")
    p.add_argument("--config", required=True, help="noise spec JSON, or a RunConfig JSON with a 'noise' key")
    _data_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the noise seed")
    p.add_argument("--train-only", action="store_true", help="corrupt only records with role 'train'")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("run", help="run one experiment; writes report.json, rounds.csv, run_meta.json")
    _run_flags(p)
    _data_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-signals", action="store_true", help="also write signals.jsonl")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-threshold", help="FX-score curves from a run's signal dump")
    _run_flags(p, with_mode=False)
    p.add_argument("--signals", required=True, help="signals.jsonl written by 'run --dump-signals'")
    p.add_argument("--x", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    p.add_argument("--round", type=int, default=None, help="round to use (default: last)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_threshold)

    p = sub.add_parser("few-shot", help="labeled-set size sweep over supervised, self_train, sent_selftrain")
    _run_flags(p, with_mode=False)
    _data_flags(p)
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_few_shot)

    p = sub.add_parser("ablate", help="rerun with signals zero-masked; one row per drop set")
    _run_flags(p)
    _data_flags(p)
    p.add_argument("--drop", action="append", default=None,
                   help="comma-separated signals to drop; repeatable; '' is the base run "
                        "(default: base plus each single signal)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="merge reports into a comparison table (markdown and JSON)")
    p.add_argument("reports", nargs="+", help="report.json files or run directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _emit(args.func(args))
        return 0
    except USAGE_ERRORS as exc:
        _fail(parser, args.verb, "usage", exc)
        return 2
    except (SentlabError, ValueError, OSError) as exc:
        _fail(parser, args.verb, "runtime", exc)
        return 1


def _fail(parser, verb, kind, exc) -> None:
    message = str(exc) if not isinstance(exc, KeyError) else exc.args[0] if exc.args else repr(exc)
    err = {"error": type(exc).__name__, "kind": kind, "verb": verb, "message": message}
    if isinstance(exc, ConfigError):
        err["field"] = exc.field
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    if kind == "usage":
        parser.print_usage(sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
