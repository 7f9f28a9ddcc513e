"""Relating the calibration matrix H to the noise transition matrix T.

Conventions: ``T[i, j] = p(noisy = j | y = i, x)``,
``H[k, j] = p(y = j | pred = k, x)`` and the auxiliary matrix
``A[k, i] = p(pred = k | noisy = i, x)``.  When the prediction and the true
label are independent given the noisy label,

    H[k, j] = p(y = j | x) / p(pred = k | x) * sum_i A[k, i] T[j, i].
"""

from dataclasses import dataclass

import numpy as np

from .classifier import TrainConfig, train_classifier
from .data import Dataset
from .errors import PreconditionError, ShapeError
from .mathcore import softmax
from .noise import class_average
from .nn import one_hot

DEFAULT_COND_CAP = 1e6


@dataclass
class TransitionEstimate:
    per_instance: np.ndarray  # (n, c, c); rows of flagged instances are NaN
    aggregate: object  # noise.TransitionMatrix
    flagged: np.ndarray  # bool mask of ill-conditioned instances
    mse: float = None

    @property
    def exclusion_rate(self):
        return float(self.flagged.mean()) if self.flagged.size else 0.0


def _aux_inputs(features, noisy):
    x = np.asarray(features, dtype=np.float64)
    return np.hstack([x, noisy])


def train_aux(features, noisy_labels, preds, cfg=TrainConfig()):
    """Fit p(pred | noisy, x): an MLP over [x, one-hot noisy] with the
    classifier's argmax as the target class."""
    noisy_labels = np.asarray(noisy_labels)
    c = preds.n_classes
    if noisy_labels.shape[0] != preds.n or np.shape(features)[0] != preds.n:
        raise ShapeError("features, noisy labels and predictions must align")
    inputs = _aux_inputs(features, one_hot(noisy_labels, c))
    ds = Dataset(inputs, c, noisy_labels=preds.labels)
    return train_classifier(ds, cfg)


def aux_matrices(aux, features, n_classes):
    """A(x) for every row, shape (n, c, c), ``A[:, k, i] = p(pred = k | noisy = i, x)``."""
    x = np.asarray(features, dtype=np.float64)
    out = np.empty((x.shape[0], n_classes, n_classes))
    for i in range(n_classes):
        noisy = np.zeros((x.shape[0], n_classes))
        noisy[:, i] = 1.0
        logits, _ = aux.forward(_aux_inputs(x, noisy))
        out[:, :, i] = softmax(logits, axis=1)
    return out


def h_from_t(t, p_y, p_pred, a):
    """H from T.  Works on single instances or stacks with a leading axis."""
    t = np.asarray(t, dtype=np.float64)
    p_y = np.asarray(p_y, dtype=np.float64)
    p_pred = np.asarray(p_pred, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if np.any(p_pred <= 0):
        raise PreconditionError("p(pred = k | x) must be positive for every k")
    # sum_i A[k, i] T[j, i]  ->  (A T^T)[k, j]
    chain = a @ np.swapaxes(t, -1, -2)
    return chain * p_y[..., None, :] / p_pred[..., :, None]


def solve_t_instance(h, p_y, p_pred, a, cond_cap=DEFAULT_COND_CAP):
    """Invert :func:`h_from_t` for one instance.

    Solves ``A @ T[j, :] = b[:, j]`` with ``b[k, j] = H[k, j] p(pred = k) / p(y = j)``
    by least squares, clamps negatives and renormalises rows.  Returns
    ``(T, ok)``; ``ok`` is False (and T is None) when cond(A) exceeds ``cond_cap``.
    """
    a = np.asarray(a, dtype=np.float64)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > cond_cap:
        return None, False
    b = np.asarray(h) * np.asarray(p_pred)[:, None] / np.asarray(p_y)[None, :]
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    t = np.clip(sol.T, 0.0, None)
    sums = t.sum(axis=1, keepdims=True)
    c = t.shape[1]
    t = np.where(sums > 0, t / np.where(sums > 0, sums, 1.0), 1.0 / c)
    return t, True


def solve_t(h, p_y, p_pred, a, cond_cap=DEFAULT_COND_CAP):
    """Per-instance T for stacks of inputs; returns (T stack, flagged mask)."""
    n, c, _ = np.shape(h)
    out = np.full((n, c, c), np.nan)
    flagged = np.zeros(n, dtype=bool)
    for idx in range(n):
        t, ok = solve_t_instance(h[idx], p_y[idx], p_pred[idx], a[idx], cond_cap)
        if ok:
            out[idx] = t
        else:
            flagged[idx] = True
    return out, flagged


def aggregate_t(per_instance, true_labels, flagged=None):
    """Class-level T: average of row y(x) of T(x) over the samples of each class."""
    per_instance = np.asarray(per_instance, dtype=np.float64)
    true_labels = np.asarray(true_labels)
    n, c, _ = per_instance.shape
    keep = np.ones(n, dtype=bool) if flagged is None else ~np.asarray(flagged)
    rows = per_instance[np.arange(n), true_labels][keep]
    return class_average(rows, true_labels[keep], c)


def transition_mse(t_hat, t_true):
    t_hat = np.asarray(getattr(t_hat, "entries", t_hat), dtype=np.float64)
    t_true = np.asarray(getattr(t_true, "entries", t_true), dtype=np.float64)
    if t_hat.shape != t_true.shape:
        raise ShapeError("transition matrices differ in shape")
    return float(np.mean((t_hat - t_true) ** 2))


def estimate_transition(h, p_y, p_pred, a, true_labels, t_true=None, cond_cap=DEFAULT_COND_CAP):
    """Recover T(x) per instance, aggregate by true class and optionally score it."""
    # keep p(pred = k | x) strictly positive as the relation requires
    p_pred = np.clip(np.asarray(p_pred, dtype=np.float64), 1e-12, None)
    p_pred = p_pred / p_pred.sum(axis=1, keepdims=True)
    per_instance, flagged = solve_t(h, p_y, p_pred, a, cond_cap)
    if flagged.all():
        raise PreconditionError("every instance was ill-conditioned; nothing to aggregate")
    agg = aggregate_t(per_instance, true_labels, flagged)
    mse = None if t_true is None else transition_mse(agg, t_true)
    return TransitionEstimate(per_instance, agg, flagged, mse)
