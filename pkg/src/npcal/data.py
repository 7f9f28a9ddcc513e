"""Dataset / prediction containers, synthetic data and binary exchange formats.

Container layouts (all integers little-endian):

``NPCD`` dataset::

    b"NPCD" | u32 version=1 | u32 n | u32 d | u32 c | u8 flags
    f32[n*d] features (row-major)
    u32[n] true labels     if flags & 1
    u32[n] noisy labels    if flags & 2

``NPCP`` predictions::

    b"NPCP" | u32 version=1 | u32 n | u32 c | u8 flags
    f32[n*c] probs
    u32 e, f32[n*e] embeddings   if flags & 1
"""

from dataclasses import dataclass
import gzip
import struct

import numpy as np

from .errors import FormatError, PreconditionError, ShapeError
from .mathcore import make_rng

FORMAT_VERSION = 1
DATASET_MAGIC = b"NPCD"
PREDICTION_MAGIC = b"NPCP"
ROW_SUM_TOL = 1e-4


def _labels(arr, n, c, name):
    if arr is None:
        return None
    arr = np.asarray(arr)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise ShapeError(f"{name} must have length {n}")
    if arr.size and (arr.min() < 0 or arr.max() >= c):
        raise ShapeError(f"{name} contains indices outside [0, {c})")
    return arr.astype(np.int64)


@dataclass(eq=False)
class Dataset:
    """Features with optional clean and noisy labels (0-indexed classes).

    Features are held as float32, matching the on-disk precision, so a save/load
    round trip is exact.
    """

    features: np.ndarray
    n_classes: int
    true_labels: np.ndarray = None
    noisy_labels: np.ndarray = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise ShapeError("features must be a 2-D array")
        if not np.all(np.isfinite(feats)):
            raise ShapeError("features must be finite")
        self.features = np.ascontiguousarray(feats)
        self.n_classes = int(self.n_classes)
        if self.n_classes < 1:
            raise ShapeError("n_classes must be positive")
        self.true_labels = _labels(self.true_labels, self.n, self.n_classes, "true_labels")
        self.noisy_labels = _labels(self.noisy_labels, self.n, self.n_classes, "noisy_labels")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.n_classes,
            None if self.true_labels is None else self.true_labels[idx],
            None if self.noisy_labels is None else self.noisy_labels[idx],
        )

    def with_noisy_labels(self, noisy):
        return Dataset(self.features, self.n_classes, self.true_labels, noisy)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.features, other.features)
            and _opt_equal(self.true_labels, other.true_labels)
            and _opt_equal(self.noisy_labels, other.noisy_labels)
        )


@dataclass(eq=False)
class PredictionSet:
    """Per-sample class probabilities from a classifier, plus optional embeddings."""

    probs: np.ndarray
    embeddings: np.ndarray = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float32)
        if probs.ndim != 2 or probs.shape[1] < 1:
            raise ShapeError("probs must be an n x c array")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ShapeError("probs must be finite and non-negative")
        sums = probs.astype(np.float64).sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise ShapeError(f"probs row {bad[0]} sums to {sums[bad[0]]:.6f}, not 1")
        self.probs = np.ascontiguousarray(probs)
        if self.embeddings is not None:
            emb = np.asarray(self.embeddings, dtype=np.float32)
            if emb.ndim != 2 or emb.shape[0] != probs.shape[0]:
                raise ShapeError("embeddings must be n x e")
            self.embeddings = np.ascontiguousarray(emb)

    @property
    def n(self):
        return self.probs.shape[0]

    @property
    def n_classes(self):
        return self.probs.shape[1]

    @property
    def labels(self):
        """Hard predictions (argmax of each row)."""
        return np.argmax(self.probs, axis=1)

    def subset(self, idx):
        idx = np.asarray(idx)
        emb = None if self.embeddings is None else self.embeddings[idx]
        return PredictionSet(self.probs[idx], emb)

    def __eq__(self, other):
        if not isinstance(other, PredictionSet):
            return NotImplemented
        return np.array_equal(self.probs, other.probs) and _opt_equal(
            self.embeddings, other.embeddings
        )


def _opt_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int
    n: int
    d: int
    cluster_spread: float = 1.0
    seed: int = 0
    # cluster means sit on a circle of radius radius_scale * cluster_spread
    radius_scale: float = 4.0

    def __post_init__(self):
        if self.n_classes < 2 or self.n < self.n_classes or self.d < 2:
            raise PreconditionError("need n_classes >= 2, n >= n_classes and d >= 2")
        if not self.cluster_spread > 0:
            raise PreconditionError("cluster_spread must be positive")


def cluster_means(spec):
    angles = 2.0 * np.pi * np.arange(spec.n_classes) / spec.n_classes
    means = np.zeros((spec.n_classes, spec.d))
    radius = spec.radius_scale * spec.cluster_spread
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def generate_gaussian_mixture(spec):
    """Isotropic Gaussian clusters, samples ordered by class.

    The first ``n % c`` classes receive one extra sample.
    """
    c = spec.n_classes
    counts = np.full(c, spec.n // c)
    counts[: spec.n % c] += 1
    labels = np.repeat(np.arange(c), counts)
    rng = make_rng(spec.seed)
    means = cluster_means(spec)
    noise = rng.standard_normal((spec.n, spec.d))
    feats = means[labels] + spec.cluster_spread * noise
    return Dataset(feats, c, true_labels=labels)


def train_test_split(ds, test_fraction, seed):
    """Shuffle deterministically and split into (train, test)."""
    if ds.n < 2:
        raise PreconditionError("need at least two samples to split")
    if not 0.0 < test_fraction < 1.0:
        raise PreconditionError("test_fraction must be in (0, 1)")
    n_test = min(max(int(round(ds.n * test_fraction)), 1), ds.n - 1)
    perm = make_rng(seed).permutation(ds.n)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def split_indices(n, test_fraction, seed):
    """Index version of :func:`train_test_split` for aligning side arrays."""
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = make_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def minmax_scale(features):
    """Scale each feature column to [0, 1]; constant columns become 0."""
    feats = np.asarray(features, dtype=np.float64)
    lo = feats.min(axis=0)
    span = feats.max(axis=0) - lo
    span[span == 0] = 1.0
    return (feats - lo) / span


# --------------------------------------------------------------------------
# binary I/O


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, size, what):
        if self.pos + size > len(self.buf):
            raise FormatError(f"truncated payload while reading {what}", self.pos)
        chunk = self.buf[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what):
        return self.take(1, what)[0]

    def array(self, dtype, count, what):
        dtype = np.dtype(dtype)
        raw = self.take(dtype.itemsize * count, what)
        return np.frombuffer(raw, dtype=dtype, count=count).copy()

    def header(self, magic):
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        version = self.u32("version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported version {version}", 4)

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError("trailing bytes after payload", self.pos)


def dataset_to_bytes(ds):
    flags = (1 if ds.true_labels is not None else 0) | (
        2 if ds.noisy_labels is not None else 0
    )
    parts = [
        DATASET_MAGIC,
        struct.pack("<IIIIB", FORMAT_VERSION, ds.n, ds.d, ds.n_classes, flags),
        ds.features.astype("<f4").tobytes(),
    ]
    for labels in (ds.true_labels, ds.noisy_labels):
        if labels is not None:
            parts.append(labels.astype("<u4").tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf):
    r = _Reader(buf)
    r.header(DATASET_MAGIC)
    n = r.u32("n")
    d = r.u32("d")
    c = r.u32("c")
    flags = r.u8("flags")
    if flags & ~0b11:
        raise FormatError(f"unknown flag bits {flags:#04x}", r.pos - 1)
    feats = r.array("<f4", n * d, "features").reshape(n, d)
    true = r.array("<u4", n, "true labels") if flags & 1 else None
    noisy = r.array("<u4", n, "noisy labels") if flags & 2 else None
    r.finish()
    return Dataset(feats, c, true, noisy)


def save_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(ds))


def load_dataset(path):
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def predictions_to_bytes(ps):
    flags = 1 if ps.embeddings is not None else 0
    parts = [
        PREDICTION_MAGIC,
        struct.pack("<IIIB", FORMAT_VERSION, ps.n, ps.n_classes, flags),
        ps.probs.astype("<f4").tobytes(),
    ]
    if ps.embeddings is not None:
        parts.append(struct.pack("<I", ps.embeddings.shape[1]))
        parts.append(ps.embeddings.astype("<f4").tobytes())
    return b"".join(parts)


def predictions_from_bytes(buf):
    r = _Reader(buf)
    r.header(PREDICTION_MAGIC)
    n = r.u32("n")
    c = r.u32("c")
    flags = r.u8("flags")
    if flags & ~0b1:
        raise FormatError(f"unknown flag bits {flags:#04x}", r.pos - 1)
    probs_at = r.pos
    probs = r.array("<f4", n * c, "probs").reshape(n, c)
    emb = None
    if flags & 1:
        e = r.u32("embedding width")
        emb = r.array("<f4", n * e, "embeddings").reshape(n, e)
    r.finish()
    try:
        return PredictionSet(probs, emb)
    except ShapeError as exc:
        raise FormatError(f"invalid probabilities: {exc}", probs_at) from exc


def save_predictions(ps, path):
    with open(path, "wb") as fh:
        fh.write(predictions_to_bytes(ps))


def load_predictions(path):
    with open(path, "rb") as fh:
        return predictions_from_bytes(fh.read())


# --------------------------------------------------------------------------
# IDX (MNIST-style) ingestion

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _read_idx(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    magic = struct.unpack(">I", r.take(4, "magic"))[0]
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"bad IDX magic {magic:#010x}", 0)
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", r.take(4 * ndim, "dimensions"))
    count = int(np.prod(dims))
    data = r.array(np.uint8, count, "IDX payload").reshape(dims)
    return magic, data


def load_idx(images_path, labels_path, scale=True, n_classes=10):
    """Read an IDX image/label pair into a flattened :class:`Dataset`.

    With ``scale`` the uint8 pixels are mapped to [0, 1].
    """
    magic, images = _read_idx(images_path)
    if magic != IDX_IMAGES:
        raise FormatError("images file does not hold 3-D image data", 0)
    magic, labels = _read_idx(labels_path)
    if magic != IDX_LABELS:
        raise FormatError("labels file does not hold 1-D label data", 0)
    if labels.shape[0] != images.shape[0]:
        raise ShapeError("image and label counts differ")
    feats = images.reshape(images.shape[0], -1).astype(np.float64)
    if scale:
        feats /= 255.0
    return Dataset(feats, n_classes, true_labels=labels.astype(np.int64))
