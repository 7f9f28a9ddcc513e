"""Special functions, seeded RNG, Dirichlet reparameterised sampling and the
closed-form KL between two products of Gamma(alpha_k, 1) variables.

All functions work in float64 and accept scalars or arrays.  The gamma rate is
fixed to 1 throughout; any shared rate cancels after normalisation.
"""

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

GAMMA_RATE = 1.0


def _positive(x, name="x"):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def _unwrap(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    arr = _positive(x)
    return _unwrap(kernels.lgamma_kernel(np.atleast_1d(arr)).reshape(arr.shape), x)


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    arr = _positive(x)
    return _unwrap(kernels.digamma_kernel(np.atleast_1d(arr)).reshape(arr.shape), x)


def trigamma(x):
    """psi'(x) for x > 0; needed for the KL gradient."""
    arr = _positive(x)
    return _unwrap(kernels.trigamma_kernel(np.atleast_1d(arr)).reshape(arr.shape), x)


# --------------------------------------------------------------------------
# RNG


def make_rng(seed, stream=0):
    """Return an independent generator for ``(seed, stream)``.

    Philox is counter-based, so distinct stream ids give non-overlapping
    substreams without any shared global state.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    stream = int(stream) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


# --------------------------------------------------------------------------
# Dirichlet sampling through the approximate gamma inverse CDF


def _check_unit_open(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(~np.isfinite(u)) or np.any(u <= 0.0) or np.any(u >= 1.0):
        raise DomainError("u must lie strictly inside (0, 1)")
    return u


def log_gamma_icdf_approx(u, alpha):
    """ln of the approximate Gamma(alpha, 1) inverse CDF, (ln u + ln a + lnG(a)) / a."""
    u = _check_unit_open(u)
    alpha = _positive(alpha, "alpha")
    lg = kernels.lgamma_kernel(np.atleast_1d(alpha)).reshape(alpha.shape)
    return (np.log(u) + np.log(alpha) + lg) / alpha


def gamma_icdf_approx(u, alpha):
    """Small-shape approximation (u * alpha * Gamma(alpha)) ** (1 / alpha)."""
    out = np.exp(log_gamma_icdf_approx(u, alpha))
    return float(out) if np.ndim(out) == 0 else out


def gamma_icdf_approx_grad(u, alpha):
    """d/d alpha of :func:`gamma_icdf_approx`."""
    alpha = _positive(alpha, "alpha")
    log_z = log_gamma_icdf_approx(u, alpha)
    return np.exp(log_z) * dlog_icdf_dalpha(log_z, alpha)


def dlog_icdf_dalpha(log_z, alpha):
    """Derivative of the log sample w.r.t. alpha given the log sample itself."""
    psi = kernels.digamma_kernel(np.atleast_1d(alpha)).reshape(np.shape(alpha))
    return (1.0 / alpha + psi - log_z) / alpha


def dirichlet_from_uniform(alpha, u):
    """Normalised approximate gamma draws for fixed noise ``u``.

    Works row-wise on 2-D input.  Normalisation is done in log space so tiny
    gamma draws cannot underflow to an all-zero row.
    """
    log_z = log_gamma_icdf_approx(u, alpha)
    return softmax(log_z, axis=-1)


def dirichlet_sample(alpha, rng):
    """Draw one (or one per row) Dirichlet sample via gamma decomposition."""
    alpha = _positive(alpha, "alpha")
    u = uniform_open(rng, alpha.shape)
    return dirichlet_from_uniform(alpha, u)


def uniform_open(rng, shape):
    """Uniform draws guaranteed to lie in the open interval (0, 1)."""
    u = rng.random(shape)
    tiny = np.finfo(np.float64).tiny
    return np.clip(u, tiny, 1.0 - np.finfo(np.float64).epsneg)


# --------------------------------------------------------------------------
# KL between MultiGamma(alpha_hat, 1) and MultiGamma(alpha, 1)


def kl_multigamma(alpha_hat, alpha):
    """Closed-form KL(q || p) summed over the last axis.

    ``sum lnG(alpha) - sum lnG(alpha_hat) + sum (alpha_hat - alpha) psi(alpha_hat)``
    """
    a_hat = _positive(alpha_hat, "alpha_hat")
    a = _positive(alpha, "alpha")
    if a_hat.shape != a.shape:
        raise ShapeError(f"shape mismatch {a_hat.shape} vs {a.shape}")
    a_hat1 = np.atleast_1d(a_hat)
    a1 = np.atleast_1d(a)
    terms = (
        kernels.lgamma_kernel(a1)
        - kernels.lgamma_kernel(a_hat1)
        + (a_hat1 - a1) * kernels.digamma_kernel(a_hat1)
    )
    out = terms.sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def kl_multigamma_grad(alpha_hat, alpha):
    """d KL / d alpha_hat, elementwise: (alpha_hat - alpha) * psi'(alpha_hat)."""
    a_hat = np.atleast_1d(np.asarray(alpha_hat, dtype=np.float64))
    a = np.asarray(alpha, dtype=np.float64)
    return (a_hat - a) * kernels.trigamma_kernel(a_hat)


# --------------------------------------------------------------------------


def softmax(v, axis=-1):
    """Max-shifted softmax."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
