"""Synthetic label-noise generators and the transition matrices they induce."""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from .errors import PreconditionError, ShapeError
from .mathcore import make_rng, softmax

NOISE_KINDS = ("SN", "ASN", "IDN", "SRIDN")

# Standard class-flip maps used with the image benchmarks (0-indexed classes).
ASN_MAPS = {
    "mnist": {2: 7, 3: 8, 5: 6, 6: 5},
    # T-shirt -> Shirt, Pullover -> Coat, Sandal -> Sneaker
    "fmnist": {0: 6, 2: 4, 5: 7},
    # truck -> automobile, bird -> airplane, deer -> horse, cat <-> dog
    "cifar10": {9: 1, 2: 0, 4: 7, 3: 5, 5: 3},
}

IDN_FLIP_STD = 0.1


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    ratio: float
    seed: int = 0
    asn_map: dict = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise PreconditionError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise PreconditionError("noise ratio must be in [0, 1]")
        if (self.kind == "ASN") != (self.asn_map is not None):
            raise PreconditionError("asn_map is required for ASN and only for ASN")


@dataclass
class NoiseOutcome:
    noisy_labels: np.ndarray
    # p(noisy = . | y_i, x_i); None when not analytic (SRIDN)
    per_instance_rows: np.ndarray = None
    flip_rates: np.ndarray = None
    # IDN projection tensor, shape (c, d, c): w[k] maps features to class scores
    projection: np.ndarray = None


@dataclass
class TransitionMatrix:
    """Row-stochastic c x c matrix, rows indexed by the conditioning class."""

    entries: np.ndarray
    empty_rows: tuple = field(default_factory=tuple)

    @property
    def n_classes(self):
        return self.entries.shape[0]


def _require_true(ds):
    if ds.true_labels is None:
        raise PreconditionError("dataset has no true labels")
    return ds.true_labels


def _draw_rows(rows, rng):
    cum = np.cumsum(rows, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(rows.shape[0])
    return np.argmax(u[:, None] < cum, axis=1)


def inject_symmetric(ds, ratio, seed):
    """Flip each label with probability ``ratio`` to a uniformly chosen other class."""
    y = _require_true(ds)
    c = ds.n_classes
    rng = make_rng(seed)
    flip = rng.random(ds.n) < ratio
    offset = rng.integers(1, c, size=ds.n) if c > 1 else np.zeros(ds.n, dtype=np.int64)
    noisy = np.where(flip, (y + offset) % c, y)
    rows = np.full((ds.n, c), ratio / (c - 1) if c > 1 else 0.0)
    rows[np.arange(ds.n), y] = 1.0 - ratio
    return NoiseOutcome(noisy, per_instance_rows=rows)


def validate_asn_map(asn_map, n_classes):
    for src, dst in asn_map.items():
        if src == dst:
            raise PreconditionError(f"asn_map has a self-loop on class {src}")
        if not (0 <= src < n_classes and 0 <= dst < n_classes):
            raise PreconditionError(f"asn_map entry {src}->{dst} out of range")


def inject_asymmetric(ds, ratio, asn_map, seed):
    """Flip map-source classes to their mapped target with probability ``ratio``."""
    y = _require_true(ds)
    c = ds.n_classes
    validate_asn_map(asn_map, c)
    target = np.arange(c)
    for src, dst in asn_map.items():
        target[src] = dst
    is_src = target != np.arange(c)
    rng = make_rng(seed)
    flip = (rng.random(ds.n) < ratio) & is_src[y]
    noisy = np.where(flip, target[y], y)
    rows = np.zeros((ds.n, c))
    idx = np.arange(ds.n)
    rows[idx, y] = np.where(is_src[y], 1.0 - ratio, 1.0)
    rows[idx, target[y]] += np.where(is_src[y], ratio, 0.0)
    return NoiseOutcome(noisy, per_instance_rows=rows)


def truncated_normal(rng, mean, std, size, low=0.0, high=1.0):
    """Rejection sampling from N(mean, std^2) restricted to [low, high]."""
    out = rng.normal(mean, std, size)
    bad = (out < low) | (out > high)
    while bad.any():
        out[bad] = rng.normal(mean, std, int(bad.sum()))
        bad = (out < low) | (out > high)
    return out


def idn_rows(features, labels, flip_rates, projection):
    """Per-instance noisy-label distributions of the instance-dependent scheme."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    idx = np.arange(n)
    scores = np.einsum("nd,ndc->nc", x, projection[labels])
    scores[idx, labels] = -np.inf
    rows = flip_rates[:, None] * softmax(scores, axis=1)
    rows[idx, labels] = 1.0 - flip_rates
    return rows


def inject_idn(ds, ratio, seed):
    """Instance-dependent noise.

    Flip rates q_i come from N(ratio, 0.1^2) truncated to [0, 1]; each class k
    owns a d x c Gaussian projection w_k.  Sample i keeps its label with
    probability 1 - q_i and spreads q_i over the other classes according to
    softmax(x_i w_{y_i}) with the true class masked out.
    """
    y = _require_true(ds)
    c = ds.n_classes
    rng = make_rng(seed)
    q = truncated_normal(rng, ratio, IDN_FLIP_STD, ds.n)
    w = rng.standard_normal((c, ds.d, c))
    rows = idn_rows(ds.features, y, q, w)
    noisy = _draw_rows(rows, rng)
    return NoiseOutcome(noisy, per_instance_rows=rows, flip_rates=q, projection=w)


def sridn_flip_count(n, ratio):
    # loop "while flipped < n * ratio"; the epsilon keeps 10 * 0.3 from becoming 4
    return min(n, int(math.ceil(n * ratio - 1e-9)))


def inject_sridn(ds, ratio, preds, seed=None):
    """Similarity-reflected noise: relabel the least-confident samples.

    Samples are ranked by the clean classifier's probability on their true
    class (ties by index) and the first ``ceil(n * ratio)`` receive their most
    probable wrong class.  Fully deterministic; ``seed`` is accepted for a
    uniform signature only.
    """
    y = _require_true(ds)
    if preds is None:
        raise PreconditionError("SRIDN needs predictions from a clean classifier")
    if preds.n != ds.n or preds.n_classes != ds.n_classes:
        raise ShapeError("predictions do not match the dataset")
    probs = preds.probs.astype(np.float64)
    idx = np.arange(ds.n)
    conf = probs[idx, y]
    order = np.argsort(conf, kind="stable")
    chosen = order[: sridn_flip_count(ds.n, ratio)]
    masked = probs.copy()
    masked[idx, y] = -np.inf
    runner_up = np.argmax(masked, axis=1)
    noisy = y.copy()
    noisy[chosen] = runner_up[chosen]
    return NoiseOutcome(noisy)


def inject(ds, spec, preds=None):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "SN":
        return inject_symmetric(ds, spec.ratio, spec.seed)
    if spec.kind == "ASN":
        return inject_asymmetric(ds, spec.ratio, spec.asn_map, spec.seed)
    if spec.kind == "IDN":
        return inject_idn(ds, spec.ratio, spec.seed)
    return inject_sridn(ds, spec.ratio, preds, spec.seed)


def class_average(rows, labels, n_classes):
    """Average per-instance rows within each conditioning class.

    Empty classes get a uniform row and are listed in ``empty_rows``.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels)
    sums = np.zeros((n_classes, rows.shape[1]))
    np.add.at(sums, labels, rows)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    empty = tuple(int(k) for k in np.flatnonzero(counts == 0))
    if empty:
        warnings.warn(f"classes {empty} have no samples; using uniform rows")
    counts[counts == 0] = 1.0
    out = sums / counts[:, None]
    out[list(empty)] = 1.0 / rows.shape[1]
    out /= out.sum(axis=1, keepdims=True)
    return TransitionMatrix(out, empty)


def true_transition(outcome, true_labels, n_classes=None):
    """Class-level T_ij = mean over samples of class i of p(noisy = j | y = i, x).

    Falls back to empirical label counts when per-instance rows are absent.
    """
    true_labels = np.asarray(true_labels)
    if outcome.per_instance_rows is not None:
        rows = outcome.per_instance_rows
        c = rows.shape[1]
    else:
        c = n_classes if n_classes is not None else int(
            max(true_labels.max(), outcome.noisy_labels.max()) + 1
        )
        rows = np.eye(c)[outcome.noisy_labels]
    return class_average(rows, true_labels, c)
