"""Numeric inner loops with a numba-compiled fast path.

Every kernel exists twice: a pure-numpy implementation (suffix ``_np``) and,
when numba is importable, an ``@njit``-compiled twin (suffix ``_nb``). The
active backend is chosen once at import time from the ``VITRA_BACKEND``
environment variable:

    VITRA_BACKEND=numpy   force the pure-numpy path
    VITRA_BACKEND=numba   require numba (ImportError if missing)
    unset                 numba if available, numpy otherwise

Matrix products are deliberately left to numpy/BLAS; the kernels here cover
the elementwise and row-reduction loops where fusing passes actually pays.
"""

import os

import numpy as np

from .errors import ConfigError

_SQRT_2_OVER_PI = 0.7978845608028654
_GELU_COEF = 0.044715

_requested = os.environ.get("VITRA_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "numba"):
    raise ConfigError(f"VITRA_BACKEND must be 'numpy' or 'numba', got {_requested!r}")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    if _requested == "numba":
        raise

USE_NUMBA = HAVE_NUMBA and _requested != "numpy"


# ---------------------------------------------------------------- numpy path


def softmax_rows_np(x):
    """Row-wise softmax of a 2-D array, max-subtracted for overflow safety."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_rows_np(x, gamma, beta, eps):
    """Per-row standardization of a 2-D array followed by an affine map."""
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * gamma + beta


def gelu_np(x):
    """Tanh-approximation GELU, elementwise."""
    inner = _SQRT_2_OVER_PI * (x + _GELU_COEF * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def entrywise_l1_np(a):
    """Sum of absolute entries of a matrix."""
    return float(np.abs(a).sum())


def induced_l1_np(a):
    """Max absolute column sum of a matrix (operator 1-norm)."""
    return float(np.abs(a).sum(axis=0).max())


def gelu_grad_np(x):
    """Derivative of the tanh-approximation GELU, elementwise."""
    inner = _SQRT_2_OVER_PI * (x + _GELU_COEF * x**3)
    t = np.tanh(inner)
    d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_COEF * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def softmax_rows_nb(x):  # pragma: no cover - exercised via dispatch
        n, m = x.shape
        out = np.empty((n, m))
        for i in range(n):
            row_max = x[i, 0]
            for j in range(1, m):
                if x[i, j] > row_max:
                    row_max = x[i, j]
            total = 0.0
            for j in range(m):
                v = np.exp(x[i, j] - row_max)
                out[i, j] = v
                total += v
            for j in range(m):
                out[i, j] /= total
        return out

    @njit(cache=True)
    def layer_norm_rows_nb(x, gamma, beta, eps):  # pragma: no cover
        n, m = x.shape
        out = np.empty((n, m))
        for i in range(n):
            mu = 0.0
            for j in range(m):
                mu += x[i, j]
            mu /= m
            var = 0.0
            for j in range(m):
                d = x[i, j] - mu
                var += d * d
            var /= m
            inv = 1.0 / np.sqrt(var + eps)
            for j in range(m):
                out[i, j] = (x[i, j] - mu) * inv * gamma[j] + beta[j]
        return out

    @njit(cache=True)
    def gelu_nb(x):  # pragma: no cover
        flat = x.ravel()
        out = np.empty(flat.shape[0])
        for i in range(flat.shape[0]):
            v = flat[i]
            inner = _SQRT_2_OVER_PI * (v + _GELU_COEF * v * v * v)
            out[i] = 0.5 * v * (1.0 + np.tanh(inner))
        return out.reshape(x.shape)

    @njit(cache=True)
    def entrywise_l1_nb(a):  # pragma: no cover
        n, m = a.shape
        total = 0.0
        for i in range(n):
            for j in range(m):
                total += abs(a[i, j])
        return total

    @njit(cache=True)
    def induced_l1_nb(a):  # pragma: no cover
        n, m = a.shape
        sums = np.zeros(m)
        for i in range(n):  # row-major walk, column accumulators
            for j in range(m):
                sums[j] += abs(a[i, j])
        best = 0.0
        for j in range(m):
            if sums[j] > best:
                best = sums[j]
        return best

    @njit(cache=True)
    def gelu_grad_nb(x):  # pragma: no cover
        flat = x.ravel()
        out = np.empty(flat.shape[0])
        for i in range(flat.shape[0]):
            v = flat[i]
            inner = _SQRT_2_OVER_PI * (v + _GELU_COEF * v * v * v)
            t = np.tanh(inner)
            d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_COEF * v * v)
            out[i] = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner
        return out.reshape(x.shape)


# ------------------------------------------------------------------ dispatch

if USE_NUMBA:
    softmax_rows = softmax_rows_nb
    layer_norm_rows = layer_norm_rows_nb
    gelu = gelu_nb
    gelu_grad = gelu_grad_nb
    entrywise_l1 = entrywise_l1_nb
    induced_l1 = induced_l1_nb
    BACKEND = "numba"
else:
    softmax_rows = softmax_rows_np
    layer_norm_rows = layer_norm_rows_np
    gelu = gelu_np
    gelu_grad = gelu_grad_np
    entrywise_l1 = entrywise_l1_np
    induced_l1 = induced_l1_np
    BACKEND = "numpy"
