"""Label correction by a signal-conditioned convex mixture.

A correction model maps a sample's signal vector to three softmax weights
``(w1, w2, w3)`` and the corrected label becomes

    CL_new = w1 * onehot(noisy label) + w2 * model prediction + w3 * CL_prev

with ``CL`` starting at the noisy one-hot. The correction model is trained on
the select split by minimizing ``-log CL_new[true label]``; the main model's
predictions and the previous corrected labels are held fixed during that step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sentlab.errors import ConfigError, DegenerateSelectionError
from sentlab.nn import (
    PROB_FLOOR,
    MlpConfig,
    MlpModel,
    apply_gradients,
    backward,
    forward,
    forward_batch,
    init_mlp,
)


@dataclass
class CorrectedLabelState:
    sample_id: str
    cl: np.ndarray


def default_corrector_config(seed: int = 0, hidden: int = 16) -> MlpConfig:
    return MlpConfig(layer_sizes=[5, hidden, 3], activation="relu", seed=seed, learning_rate=0.1)


def _check_outputs(model: MlpModel) -> None:
    if model.config.layer_sizes[-1] != 3:
        raise ConfigError("correction_model.layer_sizes", "the correction model must have 3 outputs")


def correction_weights(model: MlpModel, sg) -> tuple:
    _check_outputs(model)
    sg = sg.as_array() if hasattr(sg, "as_array") else np.asarray(sg, dtype=np.float64)
    w = forward(model, sg).probs
    return float(w[0]), float(w[1]), float(w[2])


def batch_weights(model: MlpModel, signals) -> np.ndarray:
    _check_outputs(model)
    return forward_batch(model, signals).probs


def mix(weights, noisy_onehot, pred_probs, cl_prev) -> np.ndarray:
    """Row-wise convex mixture; arrays may be single vectors or (n, k) batches."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        return w[0] * noisy_onehot + w[1] * pred_probs + w[2] * cl_prev
    return w[:, 0:1] * noisy_onehot + w[:, 1:2] * pred_probs + w[:, 2:3] * cl_prev


def update_corrected_label(state: CorrectedLabelState, noisy_onehot, pred_probs, weights) -> CorrectedLabelState:
    nl = np.asarray(noisy_onehot, dtype=np.float64)
    pred = np.asarray(pred_probs, dtype=np.float64)
    return CorrectedLabelState(state.sample_id, mix(weights, nl, pred, state.cl))


def initial_states(ids, noisy_labels, k: int):
    eye = np.eye(k)
    return [CorrectedLabelState(sid, eye[y].copy()) for sid, y in zip(ids, noisy_labels)]


def mixture_loss_and_gradients(model: MlpModel, signals, components, true_labels):
    """Mean ``-log CL[true]`` and parameter gradients.

    ``components`` has shape (n, 3, k): noisy one-hot, prediction, previous CL.
    """
    cache = forward_batch(model, signals, train_mode=False)
    w = cache.probs
    n = len(true_labels)
    picked = components[np.arange(n), :, true_labels]  # (n, 3)
    cl_true = np.sum(w * picked, axis=1)
    safe = np.maximum(cl_true, PROB_FLOOR)
    loss = float(-np.mean(np.log(safe)))
    g_w = -picked / safe[:, None]
    # softmax Jacobian: dz_i = w_i * (g_i - sum_j w_j g_j)
    dlogits = w * (g_w - np.sum(w * g_w, axis=1, keepdims=True)) / n
    return loss, backward(model, cache, dlogits)


def train_correction_model(
    signals,
    noisy_labels,
    pred_probs,
    cl_prev,
    true_labels,
    config: MlpConfig,
    epochs: int = 100,
    batch_size: int = 32,
) -> MlpModel:
    """Fit the correction model on the select split.

    ``signals`` are the (standardized) signal vectors, ``cl_prev`` the carried
    corrected labels, all row-aligned with ``true_labels``.
    """
    x = np.asarray(signals, dtype=np.float64)
    y = np.asarray(true_labels, dtype=np.int64)
    if len(y) == 0:
        raise DegenerateSelectionError("correction needs a non-empty select split")
    model = init_mlp(config)
    _check_outputs(model)
    k = np.asarray(pred_probs).shape[1]
    comps = np.stack([np.eye(k)[np.asarray(noisy_labels)], np.asarray(pred_probs), np.asarray(cl_prev)], axis=1)
    for _ in range(epochs):
        order = model.rng.permutation(len(y))
        for b, start in enumerate(range(0, len(y), batch_size)):
            idx = order[start:start + batch_size]
            _, grads = mixture_loss_and_gradients(model, x[idx], comps[idx], y[idx])
            apply_gradients(model, grads, batch_id=b)
    return model
