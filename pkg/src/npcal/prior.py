"""Instance-dependent Dirichlet prior from a KNN vote over confident anchors."""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .errors import PreconditionError, ShapeError


@dataclass(frozen=True)
class PriorConfig:
    k: int = 10
    # Anchor rule: an absolute confidence threshold wins when set, otherwise
    # the top fraction of most confident samples within each predicted class.
    confidence_threshold: float = None
    top_fraction: float = 0.25
    delta: float = 1.0
    rho: float = 10.0
    variant: str = "TOP1"
    m: int = 1
    # "auto" uses classifier embeddings when available, else raw features
    feature_space: str = "auto"

    def __post_init__(self):
        if self.k < 1:
            raise PreconditionError("k must be at least 1")
        if not (self.delta > 0 and self.rho > 0):
            raise PreconditionError("delta and rho must be positive")
        if self.variant not in ("TOP1", "TOPM"):
            raise PreconditionError(f"unknown prior variant {self.variant!r}")
        if self.m < 1:
            raise PreconditionError("m must be at least 1")
        if self.feature_space not in ("auto", "raw", "embedding"):
            raise PreconditionError(f"unknown feature space {self.feature_space!r}")
        if self.confidence_threshold is not None and not 0 < self.confidence_threshold <= 1:
            raise PreconditionError("confidence_threshold must be in (0, 1]")
        if self.confidence_threshold is None and not 0 < self.top_fraction <= 1:
            raise PreconditionError("top_fraction must be in (0, 1]")


@dataclass
class PriorAssignment:
    y_bar: np.ndarray  # most-voted class per sample
    vote_fractions: np.ndarray  # n x c
    alpha: np.ndarray  # n x c Dirichlet concentrations
    anchors: np.ndarray  # indices of the voting pool


def _top1_per_class(conf, pred):
    out = []
    for k in np.unique(pred):
        members = np.flatnonzero(pred == k)
        out.append(members[np.argmax(conf[members])])
    return np.array(out, dtype=np.int64)


def select_anchors(probs, confidence_threshold=None, top_fraction=0.25):
    """Indices of high-confidence predictions, sorted ascending.

    Never empty: if the threshold admits nothing, the most confident sample of
    each predicted class is used.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise PreconditionError("need a non-empty n x c probability array")
    conf = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    if confidence_threshold is not None:
        chosen = np.flatnonzero(conf >= confidence_threshold)
        return chosen if chosen.size else _top1_per_class(conf, pred)
    chosen = []
    for k in np.unique(pred):
        members = np.flatnonzero(pred == k)
        take = int(math.ceil(top_fraction * members.size))
        # stable sort on -conf keeps lower indices first among ties
        order = np.argsort(-conf[members], kind="stable")
        chosen.append(members[order[:take]])
    return np.sort(np.concatenate(chosen))


def knn_vote(queries, anchor_features, anchor_labels, k, n_classes):
    """Majority vote of the ``k`` nearest anchors (Euclidean, ties by anchor index).

    Returns ``(y_bar, fractions)``; vote ties go to the lower class index.
    """
    anchor_features = np.ascontiguousarray(anchor_features, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if anchor_features.shape[0] == 0:
        raise PreconditionError("anchor set is empty")
    if k > anchor_features.shape[0]:
        raise PreconditionError(f"k={k} exceeds the {anchor_features.shape[0]} anchors")
    if queries.shape[1] != anchor_features.shape[1]:
        raise ShapeError("query and anchor feature widths differ")
    nbrs = kernels.knn_kernel(queries, anchor_features, k)
    votes = np.asarray(anchor_labels)[nbrs]
    counts = np.zeros((queries.shape[0], n_classes))
    np.add.at(counts, (np.repeat(np.arange(queries.shape[0]), k), votes.ravel()), 1.0)
    fractions = counts / k
    return np.argmax(counts, axis=1), fractions


def build_alpha(vote_fractions, cfg):
    """Dirichlet concentrations from vote fractions.

    TOP1: delta everywhere plus rho on the most-voted class.
    TOPM: delta + rho * fraction on the ``m`` most-voted classes.
    """
    fr = np.atleast_2d(np.asarray(vote_fractions, dtype=np.float64))
    n, c = fr.shape
    alpha = np.full((n, c), float(cfg.delta))
    rows = np.arange(n)
    if cfg.variant == "TOP1":
        alpha[rows, np.argmax(fr, axis=1)] += cfg.rho
    else:
        if cfg.m > c:
            raise PreconditionError("m cannot exceed the number of classes")
        top = np.argsort(-fr, axis=1, kind="stable")[:, : cfg.m]
        alpha[rows[:, None], top] += cfg.rho * fr[rows[:, None], top]
    return alpha if np.ndim(vote_fractions) == 2 else alpha[0]


def prior_features(features, preds, cfg):
    space = cfg.feature_space
    if space == "auto":
        space = "embedding" if preds.embeddings is not None else "raw"
    if space == "embedding":
        if preds.embeddings is None:
            raise PreconditionError("embedding feature space requested but none provided")
        return preds.embeddings.astype(np.float64)
    return np.asarray(features, dtype=np.float64)


def build_prior(features, preds, cfg=PriorConfig()):
    """Anchors -> KNN vote -> per-sample Dirichlet prior."""
    if np.shape(features)[0] != preds.n:
        raise ShapeError("features and predictions have different lengths")
    space = prior_features(features, preds, cfg)
    anchors = select_anchors(preds.probs, cfg.confidence_threshold, cfg.top_fraction)
    anchor_labels = preds.labels[anchors]
    k = min(cfg.k, anchors.size)
    y_bar, fractions = knn_vote(space, space[anchors], anchor_labels, k, preds.n_classes)
    return PriorAssignment(y_bar, fractions, build_alpha(fractions, cfg), anchors)
