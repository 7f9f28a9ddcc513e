"""Hot numeric kernels.

Every kernel has two implementations: a numba ``@njit`` loop (``*_nb``) and a
vectorised numpy version (``*_np``).  The public names bound at the bottom of
the module pick one of them at import time.  Set ``NPCAL_DISABLE_NUMBA=1`` to
force the numpy path (useful for debugging and on platforms without numba).
"""

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("NPCAL_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)

# Lanczos approximation, g = 7, n = 9.
LANCZOS_G = 7.0
LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Arguments below this are shifted upward by recurrence before the
# asymptotic series is applied.
ASYMPTOTIC_MIN = 6.0


def _njit(fn):
    if HAVE_NUMBA:
        return njit(cache=True)(fn)
    return fn


# --------------------------------------------------------------------------
# numba kernels


@_njit
def _lgamma_scalar(x):
    if x < 0.5:
        # reflection: lnG(x) = ln(pi / sin(pi x)) - lnG(1 - x)
        return math.log(math.pi / math.sin(math.pi * x)) - _lgamma_scalar(1.0 - x)
    z = x - 1.0
    acc = LANCZOS_COEF[0]
    for i in range(1, 9):
        acc += LANCZOS_COEF[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    return HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(acc)


@_njit
def _digamma_scalar(x):
    shift = 0.0
    while x < ASYMPTOTIC_MIN:
        shift -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (
        1.0 / 12
        - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 / 132)))
    )
    return shift + math.log(x) - 0.5 * inv - series


@_njit
def _trigamma_scalar(x):
    shift = 0.0
    while x < ASYMPTOTIC_MIN:
        shift += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv + 0.5 * inv2 + inv * inv2 * (
        1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * 5.0 / 66)))
    )
    return shift + series


@_njit
def lgamma_nb(x):
    flat = x.ravel()
    out = np.empty(flat.size)
    for i in range(flat.size):
        out[i] = _lgamma_scalar(flat[i])
    return out.reshape(x.shape)


@_njit
def digamma_nb(x):
    flat = x.ravel()
    out = np.empty(flat.size)
    for i in range(flat.size):
        out[i] = _digamma_scalar(flat[i])
    return out.reshape(x.shape)


@_njit
def trigamma_nb(x):
    flat = x.ravel()
    out = np.empty(flat.size)
    for i in range(flat.size):
        out[i] = _trigamma_scalar(flat[i])
    return out.reshape(x.shape)


@_njit
def knn_indices_nb(queries, anchors, k):
    nq = queries.shape[0]
    na = anchors.shape[0]
    d = queries.shape[1]
    out = np.empty((nq, k), dtype=np.int64)
    dist = np.empty(na)
    for q in range(nq):
        for a in range(na):
            s = 0.0
            for j in range(d):
                diff = queries[q, j] - anchors[a, j]
                s += diff * diff
            dist[a] = s
        order = np.argsort(dist, kind="mergesort")
        for m in range(k):
            out[q, m] = order[m]
    return out


# --------------------------------------------------------------------------
# numpy fallbacks


def lgamma_np(x):
    x = np.asarray(x, dtype=np.float64)
    small = x < 0.5
    xr = np.where(small, 1.0 - x, x)
    z = xr - 1.0
    acc = np.full_like(z, LANCZOS_COEF[0])
    for i in range(1, 9):
        acc = acc + LANCZOS_COEF[i] / (z + i)
    t = z + LANCZOS_G + 0.5
    out = HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)
    with np.errstate(divide="ignore", invalid="ignore"):
        refl = np.log(np.pi / np.sin(np.pi * x)) - out
    return np.where(small, refl, out)


def _shift_up(x, term):
    x = np.array(x, dtype=np.float64, copy=True)
    shift = np.zeros_like(x)
    while True:
        low = x < ASYMPTOTIC_MIN
        if not low.any():
            return x, shift
        shift[low] += term(x[low])
        x[low] += 1.0


def digamma_np(x):
    x, shift = _shift_up(x, lambda v: -1.0 / v)
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (
        1.0 / 12
        - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 / 132)))
    )
    return shift + np.log(x) - 0.5 * inv - series


def trigamma_np(x):
    x, shift = _shift_up(x, lambda v: 1.0 / (v * v))
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv + 0.5 * inv2 + inv * inv2 * (
        1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * 5.0 / 66)))
    )
    return shift + series


def knn_indices_np(queries, anchors, k, chunk=256):
    out = np.empty((queries.shape[0], k), dtype=np.int64)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        diff = q[:, None, :] - anchors[None, :, :]
        dist = np.einsum("qad,qad->qa", diff, diff)
        out[start : start + chunk] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out


if USE_NUMBA:
    lgamma_kernel = lgamma_nb
    digamma_kernel = digamma_nb
    trigamma_kernel = trigamma_nb
    knn_kernel = knn_indices_nb
else:
    lgamma_kernel = lgamma_np
    digamma_kernel = digamma_np
    trigamma_kernel = trigamma_np
    knn_kernel = knn_indices_np
