"""Define-by-run reverse-mode differentiation over tensor primitives.

A :class:`GradTape` records every primitive applied while it is active (it
is a context manager). Calling :meth:`GradTape.backward` on a recorded
scalar walks the records in reverse and accumulates gradients into every
reachable tensor with ``requires_grad`` set. A tape is single-use: the
graph is data-dependent (the best-head index changes per input), so a fresh
tape is built for every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericError, UsageError
from .tensor import Tensor

_ACTIVE_TAPE: Optional["GradTape"] = None


def active_tape() -> Optional["GradTape"]:
    return _ACTIVE_TAPE


class _Node:
    __slots__ = ("out", "parents", "backward", "op")

    def __init__(self, out, parents, backward, op):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.op = op


class GradTape:
    """Ordered record of primitive applications; one backward pass per tape."""

    def __init__(self):
        self._nodes: List[_Node] = []
        self._closed = False
        self._consumed = False

    def __enter__(self) -> "GradTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise UsageError("a GradTape is already active in this context")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        self._closed = True
        return False

    def _record(self, out: Tensor, parents: Tuple[Tensor, ...], backward, op: str):
        for p in parents:
            if p._tape is not None and p._tape is not self:
                raise UsageError(
                    f"{op}: input was produced on a different (closed) tape"
                )
        out._tape = self
        self._nodes.append(_Node(out, parents, backward, op))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad leaf."""
        if self._consumed:
            raise UsageError("backward: tape already consumed")
        if loss.data.size != 1:
            raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")
        self._consumed = True

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: Dict[int, Tensor] = {}
        if loss.requires_grad:
            touched[id(loss)] = loss

        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                pg = np.asarray(pg)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
                if p.requires_grad:
                    touched[id(p)] = p

        for key, t in touched.items():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad = t.grad + grads[key]


class Parameter(Tensor):
    """Named trainable tensor; gradient accumulates in ``.grad``."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass
class FiniteDiffReport:
    """Worst-case disagreement between tape and central-difference gradients."""

    max_rel_error: float
    worst_param: Optional[str]
    worst_index: Optional[tuple]
    analytic: Optional[float]
    numeric: Optional[float]
    coords_checked: int

    def __str__(self):
        if self.worst_param is None:
            return "finite-diff check: no parameters"
        return (
            f"finite-diff check: max rel error {self.max_rel_error:.3e} at "
            f"{self.worst_param}{list(self.worst_index)} "
            f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e}, "
            f"{self.coords_checked} coords)"
        )


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
) -> FiniteDiffReport:
    """Compare tape gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be deterministic and return a scalar tensor built from
    ``params``. The relative error per coordinate uses the denominator
    max(|analytic|, |numeric|, 1e-3), which degrades to an absolute
    comparison for near-zero gradients where the difference quotient is
    dominated by roundoff.
    """
    if eps <= 0:
        raise UsageError("finite_diff_check: eps must be positive")
    params = list(params)
    if not params:
        return FiniteDiffReport(0.0, None, None, None, None, 0)

    for p in params:
        p.zero_grad()
    with GradTape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    def eval_loss() -> float:
        value = float(loss_fn().data)
        if not np.isfinite(value):
            raise NumericError("finite_diff_check: non-finite loss at perturbed point")
        return value

    worst = FiniteDiffReport(0.0, None, None, None, None, 0)
    checked = 0
    for p in params:
        flat = p.data.reshape(-1)
        an_flat = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = eval_loss()
            flat[i] = orig - eps
            f_minus = eval_loss()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            an = an_flat[i]
            rel = abs(an - numeric) / max(abs(an), abs(numeric), 1e-3)
            checked += 1
            if rel >= worst.max_rel_error:
                worst = FiniteDiffReport(
                    rel,
                    p.name,
                    tuple(int(v) for v in np.unravel_index(i, p.shape)),
                    float(an),
                    float(numeric),
                    checked,
                )
    worst.coords_checked = checked
    return worst


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
