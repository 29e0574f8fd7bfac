"""Dense feed-forward classifier used for every model in the package.

Parameters are float64 numpy arrays. Weight matrix ``l`` maps layer ``l`` to
layer ``l + 1`` and has shape ``(layer_sizes[l], layer_sizes[l + 1])``.
Hidden layers use the configured activation, the output layer is a softmax,
and dropout (inverted, so eval-mode activations need no rescaling) is applied
to hidden activations only when ``train_mode`` is true.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from sentlab.errors import ConfigError, NumericalError, ShapeError

PROB_FLOOR = 1e-12
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh")
INITS = ("uniform", "zeros")


@dataclass
class MlpConfig:
    layer_sizes: List[int]
    activation: str = "relu"
    dropout_rate: float = 0.0
    seed: int = 0
    learning_rate: float = 0.1
    l2_penalty: float = 0.0
    init: str = "uniform"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        self.validate()

    def validate(self) -> None:
        if len(self.layer_sizes) < 2:
            raise ConfigError("layer_sizes", "need at least an input and an output size")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError("layer_sizes", f"all sizes must be >= 1, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError("activation", f"expected one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate", f"must lie in [0, 1), got {self.dropout_rate}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if not (self.learning_rate >= 0.0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate", f"must be finite and >= 0, got {self.learning_rate}")
        if not (self.l2_penalty >= 0.0 and math.isfinite(self.l2_penalty)):
            raise ConfigError("l2_penalty", f"must be finite and >= 0, got {self.l2_penalty}")
        if self.init not in INITS:
            raise ConfigError("init", f"expected one of {INITS}, got {self.init!r}")

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MlpModel:
    config: MlpConfig
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    rng: np.random.Generator = field(repr=False)

    def copy(self) -> "MlpModel":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return MlpModel(
            config=MlpConfig(**self.config.to_dict()),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            rng=rng,
        )

    def parameters(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def load_parameters(self, params: Sequence[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i][...] = params[2 * i]
            self.biases[i][...] = params[2 * i + 1]


@dataclass
class ForwardResult:
    probs: np.ndarray
    hidden_activations: List[np.ndarray]
    logits: np.ndarray


@dataclass
class BatchCache:
    """Everything the backward pass needs from one batched forward pass."""

    inputs: np.ndarray
    pre_activations: List[np.ndarray]
    hidden: List[np.ndarray]  # post-activation, before dropout
    masks: List[Optional[np.ndarray]]
    logits: np.ndarray
    probs: np.ndarray


def init_mlp(config: MlpConfig) -> MlpModel:
    config.validate()
    rng = np.random.default_rng(int(config.seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        if config.init == "zeros":
            w = np.zeros((fan_in, fan_out))
        else:
            scale = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpModel(config=config, weights=weights, biases=biases, rng=rng)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward_batch(model: MlpModel, xs, train_mode: bool = False) -> BatchCache:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != model.config.layer_sizes[0]:
        raise ShapeError(
            f"expected inputs of shape (n, {model.config.layer_sizes[0]}), got {xs.shape}"
        )
    cfg = model.config
    rate = cfg.dropout_rate
    last = len(model.weights) - 1
    h = xs
    pre, hidden, masks = [], [], []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if i == last:
            logits = z
            break
        a = _activate(z, cfg.activation)
        pre.append(z)
        hidden.append(a)
        if train_mode and rate > 0.0:
            # no draw at rate 0 keeps the rng stream identical to an undropped run
            mask = (model.rng.random(a.shape) >= rate) / (1.0 - rate)
            masks.append(mask)
            h = a * mask
        else:
            masks.append(None)
            h = a
    return BatchCache(xs, pre, hidden, masks, logits, softmax(logits))


def forward(model: MlpModel, x, train_mode: bool = False) -> ForwardResult:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a single input vector, got shape {x.shape}")
    if len(x) != model.config.layer_sizes[0]:
        raise ShapeError(f"input has length {len(x)}, model expects {model.config.layer_sizes[0]}")
    cache = forward_batch(model, x[None, :], train_mode)
    return ForwardResult(
        probs=cache.probs[0],
        hidden_activations=[a[0] for a in cache.hidden],
        logits=cache.logits[0],
    )


def predict_proba(model: MlpModel, xs) -> np.ndarray:
    return forward_batch(model, xs, train_mode=False).probs


def argmax_class(probs) -> int:
    """Most probable class; ties go to the lowest index."""
    return int(np.argmax(np.asarray(probs)))


def predict(model: MlpModel, x) -> int:
    return argmax_class(forward(model, x).probs)


def predict_batch(model: MlpModel, xs) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(predict_proba(model, xs), axis=1)


def as_targets(ys, k: int) -> np.ndarray:
    """Class indices or label distributions -> (n, k) target matrix."""
    ys = np.asarray(ys)
    if ys.ndim == 1:
        if ys.size and (not np.issubdtype(ys.dtype, np.integer)):
            if not np.all(np.equal(np.mod(ys, 1), 0)):
                raise ShapeError("class-index targets must be integers")
        idx = ys.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= k):
            raise ShapeError(f"class index out of range for {k} classes")
        t = np.zeros((len(idx), k))
        t[np.arange(len(idx)), idx] = 1.0
        return t
    if ys.ndim == 2 and ys.shape[1] == k:
        return ys.astype(np.float64)
    raise ShapeError(f"targets must be indices or (n, {k}) distributions, got shape {ys.shape}")


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    return float(-np.sum(targets * np.log(np.maximum(probs, PROB_FLOOR))) / len(targets))


def backward(model: MlpModel, cache: BatchCache, dlogits: np.ndarray) -> List[np.ndarray]:
    """Gradients (w0, b0, w1, b1, ...) given d(loss)/d(logits); adds the l2 term."""
    cfg = model.config
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    g = dlogits
    last = len(model.weights) - 1
    for i in range(last, -1, -1):
        if i == 0:
            inp = cache.inputs
        else:
            inp = cache.hidden[i - 1]
            if cache.masks[i - 1] is not None:
                inp = inp * cache.masks[i - 1]
        grads_w[i] = inp.T @ g + cfg.l2_penalty * model.weights[i]
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ model.weights[i].T
            if cache.masks[i - 1] is not None:
                g = g * cache.masks[i - 1]
            g = g * _activation_grad(cache.pre_activations[i - 1], cache.hidden[i - 1], cfg.activation)
    out = []
    for gw, gb in zip(grads_w, grads_b):
        out.extend((gw, gb))
    return out


def loss_and_gradients(model: MlpModel, xs, ys, train_mode: bool = False):
    """Mean cross-entropy (without the l2 term) and gradients of the l2-penalized objective."""
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) == 0:
        raise ShapeError("empty batch")
    targets = as_targets(ys, model.config.num_classes)
    if len(targets) != len(xs):
        raise ShapeError(f"{len(xs)} inputs but {len(targets)} targets")
    cache = forward_batch(model, xs, train_mode)
    loss = cross_entropy(cache.probs, targets)
    # d/dz of -sum t log softmax(z) is p * sum(t) - t
    dlogits = (cache.probs * targets.sum(axis=1, keepdims=True) - targets) / len(xs)
    return loss, backward(model, cache, dlogits)


def objective(model: MlpModel, xs, ys) -> float:
    """Eval-mode loss whose gradient ``loss_and_gradients`` returns."""
    targets = as_targets(ys, model.config.num_classes)
    ce = cross_entropy(predict_proba(model, xs), targets)
    l2 = 0.5 * model.config.l2_penalty * sum(float(np.sum(w * w)) for w in model.weights)
    return ce + l2


def apply_gradients(model: MlpModel, grads: Sequence[np.ndarray], batch_id=None) -> None:
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient", batch_id)
    lr = model.config.learning_rate
    if lr == 0.0:
        return
    for p, g in zip(model.parameters(), grads):
        p -= lr * g


def train_step(model: MlpModel, xs, ys, train_mode: bool = True, batch_id=None) -> float:
    """One gradient-descent step; returns the mean cross-entropy before the update."""
    loss, grads = loss_and_gradients(model, xs, ys, train_mode)
    if not math.isfinite(loss):
        raise NumericalError("non-finite loss", batch_id)
    apply_gradients(model, grads, batch_id)
    return loss


def train_epoch(model: MlpModel, xs, ys, batch_size: int = 32, train_mode: bool = True) -> float:
    """Shuffled mini-batch pass over the data; returns the sample-weighted mean loss."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    n = len(xs)
    if n == 0:
        raise ShapeError("cannot train on an empty set")
    order = model.rng.permutation(n)
    total = 0.0
    for b, start in enumerate(range(0, n, batch_size)):
        idx = order[start:start + batch_size]
        total += train_step(model, xs[idx], ys[idx], train_mode=train_mode, batch_id=b) * len(idx)
    return total / n


def train_to_convergence(
    model: MlpModel,
    xs,
    ys,
    max_epochs: int = 100,
    tol: float = 1e-4,
    patience: int = 5,
    batch_size: int = 32,
) -> int:
    """Train until the epoch loss improves by less than ``tol`` for ``patience`` epochs in a row.

    Returns the number of epochs run.
    """
    best = math.inf
    stale = 0
    for epoch in range(max_epochs):
        loss = train_epoch(model, xs, ys, batch_size=batch_size)
        if best - loss < tol:
            stale += 1
            if stale >= patience:
                return epoch + 1
        else:
            stale = 0
        best = min(best, loss)
    return max_epochs


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def model_to_dict(model: MlpModel) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "rng_state": model.rng.bit_generator.state,
    }


def model_from_dict(data: dict) -> MlpModel:
    if data.get("version") != CHECKPOINT_VERSION:
        raise ConfigError("version", f"unsupported checkpoint version {data.get('version')!r}")
    config = MlpConfig(**data["config"])
    weights = [np.array(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(data["weights"], config.layer_sizes[:-1], config.layer_sizes[1:])]
    biases = [np.array(b, dtype=np.float64) for b in data["biases"]]
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = data["rng_state"]
    return MlpModel(config=config, weights=weights, biases=biases, rng=rng)


def save_model(model: MlpModel, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    from sentlab.data import atomic_write_text

    atomic_write_text(Path(path), json.dumps(model_to_dict(model)))


def load_model(path) -> MlpModel:
    return model_from_dict(json.loads(Path(path).read_text()))
