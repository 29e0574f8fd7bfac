from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from sentlab.data import atomic_write_text
from sentlab.signals import SIGNAL_NAMES


def _plain(value):
    """Convert numpy scalars/arrays (recursively) to JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


@dataclass
class RoundReport:
    round: int
    eval_metric: float
    num_selected: int
    pool_size: int
    selection_precision: Optional[float] = None
    selection_recall: Optional[float] = None
    pool_clean_rate: Optional[float] = None
    pseudo_label_accuracy: Optional[float] = None
    threshold: Optional[float] = None
    signal_means_train: Optional[Dict[str, float]] = None
    signal_means_select: Optional[Dict[str, float]] = None
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def signal_means(sg) -> Dict[str, float]:
    m = np.asarray(sg, dtype=np.float64).mean(axis=0)
    return {name: float(v) for name, v in zip(SIGNAL_NAMES, m)}


@dataclass
class ExperimentReport:
    mode: str
    setting: str
    seed: int
    config: Dict[str, Any]
    rounds: List[RoundReport]
    best_round: int
    final_eval_metric: float
    final_test_metric: Optional[float]
    key_round: Optional[int] = None
    noise_transfer: Optional[Dict[str, Any]] = None
    corruption: Optional[Dict[str, Any]] = None
    extras: Dict[str, Any] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    @property
    def key_metrics(self) -> Optional[RoundReport]:
        """Round used for pseudo-label / selection metrics (best eval among selecting rounds)."""
        if self.key_round is None:
            return None
        return next(r for r in self.rounds if r.round == self.key_round)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rounds"] = [r.to_dict() for r in self.rounds]
        return _plain(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        d = dict(d)
        d["rounds"] = [RoundReport(**r) for r in d["rounds"]]
        return cls(**d)

    def summary(self) -> dict:
        km = self.key_metrics
        return {
            "mode": self.mode,
            "seed": self.seed,
            "final_test_metric": self.final_test_metric,
            "final_eval_metric": self.final_eval_metric,
            "best_round": self.best_round,
            "selection_precision": None if km is None else km.selection_precision,
            "selection_recall": None if km is None else km.selection_recall,
            "num_selected": None if km is None else km.num_selected,
            "pseudo_label_accuracy": None if km is None else km.pseudo_label_accuracy,
        }


ROUND_CSV_COLUMNS = (
    "round",
    "eval_metric",
    "selection_precision",
    "selection_recall",
    "num_selected",
    "pool_size",
    "pool_clean_rate",
    "pseudo_label_accuracy",
    "threshold",
)
FEW_SHOT_CSV_COLUMNS = ("size", "mode", "seed", "final_test_metric", "final_eval_metric")
FX_CSV_COLUMNS = ("x", "threshold", "precision", "recall", "fx")


def csv_text(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: ("" if row.get(c) is None else row.get(c)) for c in columns})
    return buf.getvalue()


def round_curve_csv(report: ExperimentReport) -> str:
    return csv_text(ROUND_CSV_COLUMNS, [r.to_dict() for r in report.rounds])


def write_report(report: ExperimentReport, out_dir) -> None:
    out = Path(out_dir)
    atomic_write_text(out / "report.json", report.to_json())
    atomic_write_text(out / "rounds.csv", round_curve_csv(report))


def load_report(path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text()))


def comparison_table(reports: Sequence[ExperimentReport], labels: Optional[Sequence[str]] = None):
    """Rows sorted by final test metric (best first), as dicts plus a markdown rendering."""
    labels = list(labels) if labels is not None else [f"{r.mode}/seed{r.seed}" for r in reports]
    rows = []
    for label, rep in zip(labels, reports):
        row = {"run": label, **rep.summary()}
        rows.append(row)
    rows.sort(key=lambda r: (-(r["final_test_metric"] if r["final_test_metric"] is not None else -1.0), r["run"]))
    cols = ["run", "mode", "final_test_metric", "final_eval_metric", "selection_precision",
            "selection_recall", "num_selected", "pseudo_label_accuracy"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v)))
        lines.append("| " + " | ".join(cells) + " |")
    return rows, "\n".join(lines) + "\n"
