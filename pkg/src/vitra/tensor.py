"""Dense float tensors plus the differentiable primitives built on them.

A :class:`Tensor` wraps a numpy array (float64 by default). Primitives are
free functions that produce fresh tensors; when a gradient tape is active
(see :mod:`vitra.autodiff`) each primitive also registers its backward rule
on the tape. Every produced value is checked for NaN/Inf: a non-finite
result raises :class:`~vitra.errors.NumericError` instead of propagating
silently.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError, UsageError


class Tensor:
    """Dense N-dimensional array, row-major, immutable by convention."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape = None  # tape that produced this tensor, None for leaves

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the common primitives.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _check_finite(data: np.ndarray, op: str):
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    op: str,
) -> Tensor:
    """Wrap a computed array and register the backward rule on the active tape.

    ``backward`` maps the upstream gradient to one gradient array (or None)
    per parent. This is the extension hook other modules use to define new
    differentiable primitives.
    """
    from . import autodiff

    _check_finite(data, op)
    out = Tensor(data)
    tape = autodiff.active_tape()
    if tape is not None:
        tape._record(out, tuple(parents), backward, op)
    return out


# ----------------------------------------------------------------- primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-D bias to every row of a [..., D] tensor."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"bias_add: {x.shape} incompatible with bias {b.shape}")

    def backward(g):
        axes = tuple(range(g.ndim - 1))
        return g, g.sum(axis=axes) if axes else g

    return make_node(x.data + b.data, (x, b), backward, "bias_add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make_node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expects a 2-D tensor, got {a.shape}")
    return make_node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_node(
        a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),), "reshape"
    )


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise UsageError("concat: empty tensor list")
    widths = [t.shape[axis] for t in tensors]
    splits = np.cumsum(widths)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(
        data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat"
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor."""
    if a.ndim != 2:
        raise DimensionError(f"slice_cols: expects a 2-D tensor, got {a.shape}")
    if not (0 <= start < stop <= a.shape[1]):
        raise DimensionError(f"slice_cols: range [{start},{stop}) outside {a.shape}")

    def backward(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return make_node(a.data[:, start:stop].copy(), (a,), backward, "slice_cols")


def take_row(a: Tensor, i: int) -> Tensor:
    """Row i of a 2-D tensor, kept 2-D with shape (1, D)."""
    if a.ndim != 2:
        raise DimensionError(f"take_row: expects a 2-D tensor, got {a.shape}")
    if not 0 <= i < a.shape[0]:
        raise DimensionError(f"take_row: row {i} outside {a.shape}")

    def backward(g):
        full = np.zeros(a.shape)
        full[i, :] = g[0]
        return (full,)

    return make_node(a.data[i : i + 1, :].copy(), (a,), backward, "take_row")


def tile_features(a: Tensor, reps: int) -> Tensor:
    """Repeat a [n, d] tensor ``reps`` times along the feature axis -> [n, d*reps]."""
    if a.ndim != 2:
        raise DimensionError(f"tile_features: expects a 2-D tensor, got {a.shape}")
    n, d = a.shape

    def backward(g):
        return (g.reshape(n, reps, d).sum(axis=1),)

    return make_node(np.tile(a.data, (1, reps)), (a,), backward, "tile_features")


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    shape = a.shape
    return make_node(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return make_node(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
        "mean",
    )


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for {x.shape}")
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise DimensionError("softmax: empty axis")
    moved = np.moveaxis(x.data, axis, -1)
    flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    y_flat = kernels.softmax_rows(flat)
    y = np.moveaxis(y_flat.reshape(moved.shape), -1, axis)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return make_node(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise DimensionError("layer_norm: empty feature axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match D={d}"
        )
    if eps <= 0:
        raise UsageError("layer_norm: eps must be positive")
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    y = kernels.layer_norm_rows(flat, gamma.data, beta.data, eps).reshape(x.shape)

    mu = flat.mean(axis=1, keepdims=True)
    var = ((flat - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mu) * inv

    def backward(g):
        g2 = g.reshape(-1, d)
        dgamma = (g2 * xhat).sum(axis=0)
        dbeta = g2.sum(axis=0)
        gx = g2 * gamma.data
        dx = inv * (
            gx
            - gx.mean(axis=1, keepdims=True)
            - xhat * (gx * xhat).mean(axis=1, keepdims=True)
        )
        return dx.reshape(x.shape), dgamma, dbeta

    return make_node(y, (x, gamma, beta), backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(
        kernels.gelu(xd), (x,), lambda g: (g * kernels.gelu_grad(xd),), "gelu"
    )


def argmax(x: Tensor, axis: int) -> np.ndarray:
    """Plain (non-differentiable) argmax; ties resolve to the lowest index."""
    return np.argmax(x.data, axis=axis)


def sqrt_scalar(v: float) -> float:
    return math.sqrt(v)
