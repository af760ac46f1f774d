"""Multi-head self-attention, standard and residual-best-head variants.

Each head's scaled dot-product block returns both the row-stochastic
attention matrix and the attended values. The residual variant scores each
head's attention matrix with an L1 norm, picks the head with the largest
score, and adds that head's (feature-tiled) output on top of the usual
projected concatenation. Selection is treated as a constant in backward:
gradient flows through the winning head's output path only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, UsageError
from .tensor import (
    Tensor,
    bias_add,
    concat,
    matmul,
    scale,
    slice_cols,
    softmax,
    tile_features,
    transpose,
)

NORM_POLICIES = ("entrywise", "induced")
DEFAULT_NORM_POLICY = "induced"

# Optional operation counters for the benchmark's extra-work accounting.
_COUNTING = False
_COUNTS: Dict[str, int] = {}


def set_instrumentation(enabled: bool) -> None:
    global _COUNTING
    _COUNTING = enabled
    _COUNTS.clear()


def op_counts() -> Dict[str, int]:
    return dict(_COUNTS)


def _count(key: str) -> None:
    if _COUNTING:
        _COUNTS[key] = _COUNTS.get(key, 0) + 1


@dataclass
class AttentionWeights:
    """Q/K/V and output-projection weights for one attention layer."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_proj: Tensor
    b_proj: Tensor

    def tensors(self) -> List[Tensor]:
        return [
            self.w_q, self.b_q, self.w_k, self.b_k,
            self.w_v, self.b_v, self.w_proj, self.b_proj,
        ]


@dataclass
class AttentionTrace:
    """Per-head attention matrices, outputs, norm scores, and the winner."""

    prob_attention: List[np.ndarray]
    head_outputs: List[np.ndarray]
    norms: List[float]
    selected: int
    sorted_norms: List[float] = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return {
            "norms": self.norms,
            "sorted_norms": self.sorted_norms,
            "selected": self.selected,
        }


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    """Return (probabilistic attention A, attention output A @ V)."""
    if q.shape != k.shape or q.shape[0] != v.shape[0]:
        raise DimensionError(
            f"scaled_dot_attention: incompatible shapes Q{q.shape} K{k.shape} V{v.shape}"
        )
    d = q.shape[1]
    if d < 1:
        raise DimensionError("scaled_dot_attention: head size must be >= 1")
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    attn = softmax(scores, axis=1)
    out = matmul(attn, v)
    return attn, out


def head_norm(attn_matrix: np.ndarray, policy: str) -> float:
    """L1 score of one head's attention matrix under the given policy.

    entrywise: sum of absolute entries -- constant n on row-stochastic
    matrices, kept for the degeneracy property.
    induced: max absolute column sum -- measures how concentrated the
    attention is on particular tokens.
    """
    if policy not in NORM_POLICIES:
        raise UsageError(f"unknown norm policy {policy!r}; expected {NORM_POLICIES}")
    _count("head_norm")
    a = np.ascontiguousarray(attn_matrix)
    if policy == "entrywise":
        return float(kernels.entrywise_l1(a))
    return float(kernels.induced_l1(a))


def select_best_head(norms: Sequence[float]) -> int:
    """Index of the largest norm; ties break to the lowest index.

    Values within 1e-12 (relative) of the maximum count as tied: norms that
    are mathematically equal differ by an ulp in float arithmetic, and the
    tie-break must still be deterministic there.
    """
    if len(norms) == 0:
        raise UsageError("select_best_head: empty norm list")
    _count("argmax_select")
    values = np.asarray(norms, dtype=float)
    top = values.max()
    tol = 1e-12 * max(1.0, abs(top))
    return int(np.argmax(values >= top - tol))


def _project_heads(x: Tensor, w: AttentionWeights, h: int):
    n, d_model = x.shape
    if d_model % h != 0:
        raise ConfigError(f"model dim {d_model} not divisible by {h} heads")
    d_head = d_model // h
    q = bias_add(matmul(x, w.w_q), w.b_q)
    k = bias_add(matmul(x, w.w_k), w.b_k)
    v = bias_add(matmul(x, w.w_v), w.b_v)
    heads = []
    for i in range(h):
        lo, hi = i * d_head, (i + 1) * d_head
        heads.append(
            scaled_dot_attention(
                slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
            )
        )
    return heads


def multi_head_attention_standard(x: Tensor, w: AttentionWeights, h: int) -> Tensor:
    """Vanilla MHA: per-head attention, concatenated, linearly projected."""
    heads = _project_heads(x, w, h)
    merged = concat([out for _, out in heads], axis=1)
    return bias_add(matmul(merged, w.w_proj), w.b_proj)


def multi_head_attention_residual(
    x: Tensor,
    w: AttentionWeights,
    h: int,
    policy: str = DEFAULT_NORM_POLICY,
    residual_gain: float = 1.0,
) -> Tuple[Tensor, AttentionTrace]:
    """MHA plus the best-scoring head's output added as a residual term.

    The winning head's [n, d_head] output is tiled h times along features to
    match the projected [n, D] output. ``residual_gain`` is a test hook:
    0.0 reduces the layer to the standard variant exactly.
    """
    heads = _project_heads(x, w, h)
    merged = concat([out for _, out in heads], axis=1)
    projected = bias_add(matmul(merged, w.w_proj), w.b_proj)

    norms = [head_norm(attn.data, policy) for attn, _ in heads]
    best = select_best_head(norms)
    trace = AttentionTrace(
        prob_attention=[attn.data for attn, _ in heads],
        head_outputs=[out.data for _, out in heads],
        norms=norms,
        selected=best,
        sorted_norms=sorted(norms, reverse=True),
    )

    residual = tile_features(heads[best][1], h)
    if residual_gain != 1.0:
        residual = scale(residual, residual_gain)
    _count("tiled_add")
    return projected + residual, trace
