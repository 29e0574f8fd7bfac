"""Datasets, the JSONL file format, text hashing, dev splits and synthetic blobs.

File format: one JSON object per line with keys

    id          string
    features    list of numbers      (exactly one of features / text)
    text        string
    label       observed class index (null allowed for role "unlabeled")
    true_label  ground-truth class index or null
    role        one of train, unlabeled, select, eval, test

Text is turned into features with signed feature hashing: each token's
FNV-1a 64-bit hash of its UTF-8 bytes picks the bucket ``h % dim`` and bit 63
picks the sign. The accumulated vector is l2-normalized.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from sentlab.errors import ConfigError, ParseError, SchemaError

ROLES = ("train", "unlabeled", "select", "eval", "test")
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_TOKEN_RE = re.compile(r"[^\W_]+|_+", re.UNICODE)
MISSING = -1
GOLD_ROLES = ("select", "eval", "test")


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the same directory and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class VectorizerSpec:
    dim: int = 1024
    lowercase: bool = True

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigError("vectorizer.dim", "must be at least 2")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str, lowercase: bool = True) -> List[str]:
    # split on unicode whitespace and punctuation
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


def vectorize_text(text: str, spec: VectorizerSpec = VectorizerSpec()) -> np.ndarray:
    vec = np.zeros(spec.dim)
    for token in tokenize(text, spec.lowercase):
        h = fnv1a_64(token.encode("utf-8"))
        vec[h % spec.dim] += -1.0 if (h >> 63) & 1 else 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass
class Dataset:
    ids: List[str]
    features: np.ndarray
    labels: np.ndarray
    true_labels: np.ndarray
    roles: List[str]
    num_classes: int
    texts: Optional[List[str]] = None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def has_truth(self) -> bool:
        return bool(len(self)) and bool(np.all(self.true_labels != MISSING))

    @property
    def dim(self) -> int:
        return int(self.features.shape[1]) if self.features.ndim == 2 else 0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            ids=[self.ids[i] for i in idx],
            features=self.features[idx],
            labels=self.labels[idx].copy(),
            true_labels=self.true_labels[idx].copy(),
            roles=[self.roles[i] for i in idx],
            num_classes=self.num_classes,
            texts=None if self.texts is None else [self.texts[i] for i in idx],
        )

    def with_labels(self, labels, true_labels=None) -> "Dataset":
        return replace(
            self,
            labels=np.asarray(labels, dtype=np.int64).copy(),
            true_labels=(self.true_labels if true_labels is None else np.asarray(true_labels, dtype=np.int64)).copy(),
        )

    def with_role(self, role: str) -> "Dataset":
        return replace(self, roles=[role] * len(self))

    def by_role(self, role: str) -> "Dataset":
        return self.subset([i for i, r in enumerate(self.roles) if r == role])

    def clean_mask(self) -> np.ndarray:
        return self.labels == self.true_labels


def concat(parts: Sequence[Dataset]) -> Dataset:
    parts = [p for p in parts if len(p)]
    if not parts:
        raise SchemaError("nothing to concatenate")
    texts = None
    if all(p.texts is not None for p in parts):
        texts = [t for p in parts for t in p.texts]
    return Dataset(
        ids=[i for p in parts for i in p.ids],
        features=np.vstack([p.features for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        true_labels=np.concatenate([p.true_labels for p in parts]),
        roles=[r for p in parts for r in p.roles],
        num_classes=max(p.num_classes for p in parts),
        texts=texts,
    )


@dataclass(frozen=True)
class DatasetSchema:
    num_classes: Optional[int] = None
    vectorizer: VectorizerSpec = field(default_factory=VectorizerSpec)


def _class_index(value, what, line):
    if value is None:
        return MISSING
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise SchemaError(f"line {line}: {what} must be a non-negative integer, got {value!r}")
    return value


def parse_records(lines, schema: DatasetSchema = DatasetSchema()) -> Dataset:
    ids, feats, texts, labels, truths, roles = [], [], [], [], [], []
    kinds = set()
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ParseError(lineno, "record is not a JSON object")
        has_f, has_t = rec.get("features") is not None, rec.get("text") is not None
        if has_f == has_t:
            raise SchemaError(f"line {lineno}: exactly one of 'features' and 'text' is required")
        sid = rec.get("id")
        if not isinstance(sid, str) or not sid:
            raise SchemaError(f"line {lineno}: 'id' must be a non-empty string")
        if sid in seen:
            raise SchemaError(f"line {lineno}: duplicate id {sid!r}")
        seen.add(sid)
        role = rec.get("role", "train")
        if role not in ROLES:
            raise SchemaError(f"line {lineno}: unknown role {role!r}")
        label = _class_index(rec.get("label"), "label", lineno)
        if label == MISSING and role != "unlabeled":
            raise SchemaError(f"line {lineno}: 'label' is required for role {role!r}")
        truth = _class_index(rec.get("true_label"), "true_label", lineno)
        if has_f:
            f = rec["features"]
            if not isinstance(f, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in f):
                raise SchemaError(f"line {lineno}: 'features' must be a list of numbers")
            feats.append(np.asarray(f, dtype=np.float64))
            texts.append(None)
            kinds.add("features")
        else:
            if not isinstance(rec["text"], str):
                raise SchemaError(f"line {lineno}: 'text' must be a string")
            feats.append(vectorize_text(rec["text"], schema.vectorizer))
            texts.append(rec["text"])
            kinds.add("text")
        ids.append(sid)
        labels.append(label)
        truths.append(truth)
        roles.append(role)
    if not ids:
        raise SchemaError("dataset is empty")
    if len(kinds) > 1:
        raise SchemaError("records mix 'features' and 'text'")
    dims = {len(f) for f in feats}
    if len(dims) != 1:
        raise SchemaError(f"feature dimensions differ across records: {sorted(dims)}")
    labels = np.asarray(labels, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    inferred = int(max(labels.max(), truths.max())) + 1
    k = schema.num_classes if schema.num_classes is not None else inferred
    if inferred > k:
        raise SchemaError(f"label {inferred - 1} is out of range for {k} declared classes")
    return Dataset(
        ids=ids,
        features=np.vstack(feats),
        labels=labels,
        true_labels=truths,
        roles=roles,
        num_classes=max(k, 2),
        texts=texts if "text" in kinds else None,
    )


def load_dataset(path, schema: DatasetSchema = DatasetSchema()) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh, schema)


def dataset_records(ds: Dataset) -> List[dict]:
    out = []
    for i, sid in enumerate(ds.ids):
        rec = {"id": sid}
        if ds.texts is not None:
            rec["text"] = ds.texts[i]
        else:
            rec["features"] = ds.features[i].tolist()
        rec["label"] = None if ds.labels[i] == MISSING else int(ds.labels[i])
        rec["true_label"] = None if ds.true_labels[i] == MISSING else int(ds.true_labels[i])
        rec["role"] = ds.roles[i]
        out.append(rec)
    return out


def save_dataset(ds: Dataset, path) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in dataset_records(ds)]
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def split_dev(dev: Dataset, seed: int = 0):
    """Stratified 50/50 split into (select half, eval half), keyed on true labels when known."""
    k = dev.num_classes
    if len(dev) < 2 * k:
        raise ConfigError("dev", f"need at least {2 * k} dev samples to split, got {len(dev)}")
    strata = np.where(dev.true_labels != MISSING, dev.true_labels, dev.labels)
    rng = np.random.default_rng(seed)
    sel, ev = [], []
    extra_to_select = True
    for c in range(k):
        members = np.flatnonzero(strata == c)
        members = members[rng.permutation(len(members))]
        half = len(members) // 2
        if len(members) % 2:
            # alternate the odd member so the halves differ by at most one
            cut = half + 1 if extra_to_select else half
            extra_to_select = not extra_to_select
        else:
            cut = half
        sel.extend(members[:cut].tolist())
        ev.extend(members[cut:].tolist())
    return dev.subset(sorted(sel)).with_role("select"), dev.subset(sorted(ev)).with_role("eval")


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------


def blob_centers(k: int, separation: float, dim: int = 2) -> np.ndarray:
    """k centers on a circle with neighbouring centers ``separation`` apart."""
    if k < 2:
        raise ConfigError("k", "need at least two classes")
    radius = separation / (2.0 * np.sin(np.pi / k))
    angles = 2.0 * np.pi * np.arange(k) / k
    centers = np.zeros((k, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gaussian_blobs(n: int, k: int = 3, separation: float = 3.0, seed: int = 0,
                   role: str = "train", prefix: Optional[str] = None, dim: int = 2) -> Dataset:
    """Balanced-in-expectation isotropic unit-variance blobs with clean labels."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, k, size=n)
    x = blob_centers(k, separation, dim)[y] + rng.standard_normal((n, dim))
    prefix = prefix or role
    return Dataset(
        ids=[f"{prefix}-{i:05d}" for i in range(n)],
        features=x,
        labels=y.astype(np.int64),
        true_labels=y.astype(np.int64),
        roles=[role] * n,
        num_classes=k,
    )


@dataclass
class Splits:
    train: Optional[Dataset] = None
    unlabeled: Optional[Dataset] = None
    select: Optional[Dataset] = None
    eval: Optional[Dataset] = None
    test: Optional[Dataset] = None

    def all(self) -> Dataset:
        return concat([d for d in (self.train, self.unlabeled, self.select, self.eval, self.test) if d is not None])

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "Splits":
        """Group records by role.

        Select, eval and test records are gold data, so a missing true label
        defaults to the observed one there.
        """
        parts = {}
        for role in ROLES:
            idx = [i for i, r in enumerate(ds.roles) if r == role]
            part = ds.subset(idx) if idx else None
            if part is not None and role in GOLD_ROLES:
                part.true_labels = np.where(part.true_labels == MISSING, part.labels, part.true_labels)
            parts[role] = part
        return cls(**parts)


def make_benchmark(seed: int, n_train: int = 2000, n_dev: int = 200, n_test: int = 1000,
                   n_unlabeled: int = 0, k: int = 3, separation: float = 3.0) -> Splits:
    """Clean blob splits; the dev set is halved into select and eval."""
    ss = np.random.SeedSequence([seed, 0xB10B])
    s_train, s_unl, s_dev, s_test, s_split = (int(c.generate_state(1)[0]) for c in ss.spawn(5))
    dev = gaussian_blobs(n_dev, k, separation, s_dev, role="eval", prefix="dev")
    select, evalset = split_dev(dev, s_split)
    unlabeled = None
    if n_unlabeled:
        unlabeled = gaussian_blobs(n_unlabeled, k, separation, s_unl, role="unlabeled")
        unlabeled.labels[:] = MISSING
    return Splits(
        train=gaussian_blobs(n_train, k, separation, s_train, role="train"),
        unlabeled=unlabeled,
        select=select,
        eval=evalset,
        test=gaussian_blobs(n_test, k, separation, s_test, role="test"),
    )
