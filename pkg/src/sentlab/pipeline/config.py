from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

import numpy as np

from sentlab.errors import ConfigError
from sentlab.nn import MlpConfig
from sentlab.noise import NoiseSpec
from sentlab.selection import ThresholdPolicy
from sentlab.signals import SIGNAL_NAMES

MODES = (
    "sent_corruption",
    "sent_selftrain",
    "supervised",
    "self_train",
    "self_train_thres",
    "noisy_student",
    "ours_plus_noisy",
)
SETTINGS = ("corruption", "selftrain")
CORRUPTION_MODES = ("sent_corruption", "supervised", "self_train_thres")


TRANSFER_MODES = ("transition", "sample", "argmax")


def derive_seed(seed: int, *keys) -> int:
    """Independent 63-bit seed for a named sub-stream of a run."""
    words = []
    for key in keys:
        if isinstance(key, str):
            words.append(zlib.crc32(key.encode("utf-8")))
        else:
            words.append(int(key) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(words))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int((int(hi) << 32 | int(lo)) & ((1 << 63) - 1))


@dataclass
class ArchSpec:
    """Architecture and optimizer settings; input/output sizes come from the data."""

    hidden: Tuple[int, ...] = (64, 64)
    activation: str = "relu"
    dropout_rate: float = 0.0
    learning_rate: float = 0.1
    l2_penalty: float = 0.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def build(self, in_dim: int, out_dim: int, seed: int, dropout_rate: Optional[float] = None) -> MlpConfig:
        return MlpConfig(
            layer_sizes=[in_dim, *self.hidden, out_dim],
            activation=self.activation,
            dropout_rate=self.dropout_rate if dropout_rate is None else dropout_rate,
            seed=seed,
            learning_rate=self.learning_rate,
            l2_penalty=self.l2_penalty,
        )


@dataclass
class RunConfig:
    mode: str = "sent_corruption"
    setting: Optional[str] = None
    seed: int = 0
    # label-corruption loop
    total_epochs: int = 25
    pretrain_epochs: int = 5
    noise_max_epochs: int = 100
    noise_tol: float = 1e-4
    noise_patience: int = 5
    transfer: Optional[str] = None
    # self-training loop
    rounds: int = 5
    round_max_epochs: int = 60
    student_init: str = "fresh"
    student_dropout: float = 0.2
    thres_grid: Tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
    # confidence used by self_train_thres under label corruption: the top
    # softmax probability, or the probability of the observed label
    thres_score: str = "max_softmax"
    # models
    batch_size: int = 32
    main_model: ArchSpec = field(default_factory=lambda: ArchSpec(learning_rate=0.3))
    selection_model: ArchSpec = field(default_factory=lambda: ArchSpec(hidden=(16,)))
    selection_patience: int = 10
    selection_holdout: float = 0.2
    selection_max_epochs: int = 300
    # signals and selection
    gamma: float = 0.9
    history_capacity: int = 12
    threshold_policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    standardize_signals: bool = True
    drop_signals: Tuple[str, ...] = ()
    # correction
    correction_enabled: bool = False
    correction_model: ArchSpec = field(default_factory=lambda: ArchSpec(hidden=(16,)))
    correction_epochs: int = 100
    # evaluation and data
    metric: str = "accuracy"
    noise: Optional[NoiseSpec] = None

    def __post_init__(self):
        if isinstance(self.main_model, dict):
            self.main_model = ArchSpec(**self.main_model)
        if isinstance(self.selection_model, dict):
            self.selection_model = ArchSpec(**self.selection_model)
        if isinstance(self.correction_model, dict):
            self.correction_model = ArchSpec(**self.correction_model)
        if isinstance(self.threshold_policy, dict):
            self.threshold_policy = ThresholdPolicy(**self.threshold_policy)
        if isinstance(self.noise, dict):
            self.noise = NoiseSpec(**self.noise)
        self.thres_grid = tuple(float(t) for t in self.thres_grid)
        self.drop_signals = tuple(self.drop_signals)
        if self.setting is None:
            # injected noise implies the corruption setting for the modes that exist there
            noisy = self.noise is not None and self.mode in CORRUPTION_MODES
            self.setting = "corruption" if self.mode == "sent_corruption" or noisy else "selftrain"
        if self.transfer is None:
            self.transfer = "transition" if self.setting == "corruption" else "argmax"
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("mode", f"expected one of {MODES}, got {self.mode!r}")
        if self.setting not in SETTINGS:
            raise ConfigError("setting", f"expected one of {SETTINGS}, got {self.setting!r}")
        if self.setting == "corruption" and self.mode not in CORRUPTION_MODES:
            raise ConfigError("mode", f"{self.mode!r} is not available in the corruption setting")
        if self.mode == "sent_corruption" and self.setting != "corruption":
            raise ConfigError("setting", "sent_corruption runs in the corruption setting")
        if self.mode == "sent_selftrain" and self.setting != "selftrain":
            raise ConfigError("setting", "sent_selftrain runs in the selftrain setting")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs", "must be positive")
        if not 0 <= self.pretrain_epochs < self.total_epochs:
            raise ConfigError("pretrain_epochs", "must satisfy 0 <= pretrain_epochs < total_epochs")
        if self.rounds < 0:
            raise ConfigError("rounds", "must be >= 0")
        if self.round_max_epochs < 1:
            raise ConfigError("round_max_epochs", "must be positive")
        if self.transfer not in TRANSFER_MODES:
            raise ConfigError("transfer", f"expected one of {TRANSFER_MODES}")
        if self.thres_score not in ("max_softmax", "observed_label"):
            raise ConfigError("thres_score", "expected 'max_softmax' or 'observed_label'")
        if self.student_init not in ("fresh", "continue"):
            raise ConfigError("student_init", "expected 'fresh' or 'continue'")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma", "must lie in [0, 1]")
        if self.history_capacity < 1:
            raise ConfigError("history_capacity", "must be positive")
        if self.metric not in ("accuracy", "micro_f1"):
            raise ConfigError("metric", "expected 'accuracy' or 'micro_f1'")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be positive")
        unknown = set(self.drop_signals) - set(SIGNAL_NAMES)
        if unknown:
            raise ConfigError("drop_signals", f"unknown signals {sorted(unknown)}")
        if set(self.drop_signals) == set(SIGNAL_NAMES):
            raise ConfigError("drop_signals", "cannot drop all five signals")
        hidden = self.main_model.hidden
        if not hidden:
            raise ConfigError("main_model.hidden", "the main model needs at least one hidden layer")
        if "FLS" not in self.drop_signals and hidden[0] != hidden[-1]:
            raise ConfigError(
                "main_model.hidden",
                "first and last hidden widths must match to compute FLS (or drop FLS)",
            )

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["thres_grid"] = list(self.thres_grid)
        out["drop_signals"] = list(self.drop_signals)
        for key in ("main_model", "selection_model", "correction_model"):
            out[key]["hidden"] = list(out[key]["hidden"])
        if self.noise is not None and self.noise.weak_model is not None:
            weak = out["noise"]["weak_model"]
            weak["hidden"] = list(weak["hidden"])
            if weak["input_dims"] is not None:
                weak["input_dims"] = list(weak["input_dims"])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        return cls(**data)
