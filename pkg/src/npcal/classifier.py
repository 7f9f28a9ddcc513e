"""Baseline MLP classifier trained on noisy labels (CE, label smoothing, early stop)."""

from dataclasses import dataclass

import numpy as np

from .data import PredictionSet, split_indices
from .errors import PreconditionError, ShapeError, TrainingError
from .mathcore import log_softmax, make_rng, softmax
from .nn import Adam, Mlp, load_mlp, minibatches, one_hot, save_mlp

__all__ = [
    "TrainConfig",
    "train_classifier",
    "predict",
    "smoothed_targets",
    "cross_entropy",
    "save_mlp",
    "load_mlp",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 128
    seed: int = 0
    smoothing: float = 0.0
    # (validation fraction, patience in epochs) or None
    early_stop: tuple = None
    hidden: tuple = (128, 128)

    def __post_init__(self):
        if not 0.0 <= self.smoothing < 1.0:
            raise PreconditionError("smoothing must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise PreconditionError("epochs, batch_size and learning_rate must be positive")


def smoothed_targets(labels, n_classes, smoothing):
    """(1 - eps) * one_hot + eps / c."""
    return (1.0 - smoothing) * one_hot(labels, n_classes) + smoothing / n_classes


def cross_entropy(logits, targets):
    """Mean cross-entropy against soft targets and its gradient w.r.t. logits."""
    loss = -(targets * log_softmax(logits)).sum(axis=1).mean()
    grad = (softmax(logits) - targets) / logits.shape[0]
    return loss, grad


def accuracy_of(model, features, labels):
    logits, _ = model.forward(features)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train_classifier(ds, cfg):
    """Fit an MLP to ``ds.noisy_labels`` and return it.

    With ``cfg.early_stop = (val_fraction, patience)`` a validation split is
    carved out of the noisy training data and the parameters of the best
    validation epoch are returned.
    """
    if ds.noisy_labels is None:
        raise PreconditionError("dataset has no noisy labels to train on")
    x = ds.features.astype(np.float64)
    y = ds.noisy_labels
    c = ds.n_classes
    val = None
    if cfg.early_stop is not None:
        val_fraction, patience = cfg.early_stop
        tr_idx, val_idx = split_indices(ds.n, val_fraction, cfg.seed)
        val = (x[val_idx], y[val_idx])
        x, y = x[tr_idx], y[tr_idx]
    if cfg.batch_size > x.shape[0]:
        raise PreconditionError("batch_size exceeds the number of training samples")

    rng = make_rng(cfg.seed)
    model = Mlp([x.shape[1], *cfg.hidden, c], rng=rng)
    opt = Adam(model.params, lr=cfg.learning_rate)
    targets = smoothed_targets(y, c, cfg.smoothing)

    best_acc, best_model, stale = -1.0, None, 0
    for epoch in range(cfg.epochs):
        for idx in minibatches(x.shape[0], cfg.batch_size, rng):
            logits, cache = model.forward(x[idx])
            loss, grad = cross_entropy(logits, targets[idx])
            if not np.isfinite(loss):
                raise TrainingError("classifier loss is not finite", epoch)
            grads, _ = model.backward(cache, grad)
            opt.step(model.params, grads)
        if val is not None:
            acc = accuracy_of(model, *val)
            if acc > best_acc:
                best_acc, best_model, stale = acc, model.copy(), 0
            else:
                stale += 1
                if stale >= patience:
                    break
    return best_model if val is not None else model


def predict(model, features):
    """Softmax probabilities plus last-hidden-layer embeddings."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.input_dim:
        raise ShapeError(
            f"features have width {features.shape[-1]}, model expects {model.input_dim}"
        )
    logits, (inputs, _) = model.forward(features)
    return PredictionSet(softmax(logits), embeddings=inputs[-1])
