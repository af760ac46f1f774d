"""Vision transformer assembly: patches, encoder blocks, classifier head.

Blocks are pre-norm: x <- x + Attn(LN(x)); x <- x + MLP(LN(x)). The class
token row of the final layer-norm output feeds a single linear classifier.
Logits are raw scores; softmax lives in the loss / prediction step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .attention import (
    AttentionTrace,
    AttentionWeights,
    multi_head_attention_residual,
    multi_head_attention_standard,
)
from .autodiff import Parameter
from .errors import ConfigError
from .tensor import Tensor, bias_add, concat, gelu, layer_norm, matmul, reshape, take_row

ATTENTION_VARIANTS = ("standard", "residual")


@dataclass
class ViTConfig:
    image_size: int = 16
    channels: int = 1
    patch_size: int = 4
    embed_dim: int = 16
    depth: int = 2
    heads: int = 4
    mlp_dim: int = 32
    num_classes: int = 4
    attention_variant: str = "residual"
    norm_policy: str = "induced"
    seed: int = 0

    def validate(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ConfigError(
                f"embed dim {self.embed_dim} not divisible by {self.heads} heads"
            )
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ConfigError(f"unknown attention variant {self.attention_variant!r}")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 1  # class token prepended

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


class ModelState:
    """All named parameters of one model, in registration order."""

    def __init__(self):
        self._params: Dict[str, Parameter] = {}

    def register(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def names(self) -> List[str]:
        return list(self._params.keys())


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(cfg: ViTConfig, seed: Optional[int] = None) -> ModelState:
    """Seeded initialization: trunc-normal weights (std 0.02), zero biases."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    d, std = cfg.embed_dim, 0.02
    state = ModelState()

    state.register("patch.w", _trunc_normal(rng, (cfg.patch_dim, d), std))
    state.register("patch.b", np.zeros(d))
    state.register("pos", rng.normal(0.0, std, size=(cfg.n_tokens, d)))
    state.register("cls", np.zeros((1, d)))

    for i in range(cfg.depth):
        pre = f"block{i}"
        for ln in ("ln1", "ln2"):
            state.register(f"{pre}.{ln}.gamma", np.ones(d))
            state.register(f"{pre}.{ln}.beta", np.zeros(d))
        for mat in ("w_q", "w_k", "w_v", "w_proj"):
            state.register(f"{pre}.attn.{mat}", _trunc_normal(rng, (d, d), std))
        for vec in ("b_q", "b_k", "b_v", "b_proj"):
            state.register(f"{pre}.attn.{vec}", np.zeros(d))
        state.register(f"{pre}.mlp.w1", _trunc_normal(rng, (d, cfg.mlp_dim), std))
        state.register(f"{pre}.mlp.b1", np.zeros(cfg.mlp_dim))
        state.register(f"{pre}.mlp.w2", _trunc_normal(rng, (cfg.mlp_dim, d), std))
        state.register(f"{pre}.mlp.b2", np.zeros(d))

    state.register("final_ln.gamma", np.ones(d))
    state.register("final_ln.beta", np.zeros(d))
    state.register("head.w", _trunc_normal(rng, (d, cfg.num_classes), std))
    state.register("head.b", np.zeros(cfg.num_classes))
    return state


def _attn_weights(state: ModelState, block: int) -> AttentionWeights:
    pre = f"block{block}.attn"
    return AttentionWeights(
        w_q=state[f"{pre}.w_q"], b_q=state[f"{pre}.b_q"],
        w_k=state[f"{pre}.w_k"], b_k=state[f"{pre}.b_k"],
        w_v=state[f"{pre}.w_v"], b_v=state[f"{pre}.b_v"],
        w_proj=state[f"{pre}.w_proj"], b_proj=state[f"{pre}.b_proj"],
    )


def extract_patches(image: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    """Non-overlapping P x P x C patches, scanned left-to-right, top-to-bottom,
    each flattened row-major -> [(H/P)^2, P*P*C]."""
    h, w = cfg.image_size, cfg.image_size
    if image.shape != (h, w, cfg.channels):
        raise ConfigError(
            f"image shape {image.shape} does not match config "
            f"({h}, {w}, {cfg.channels})"
        )
    p = cfg.patch_size
    g = h // p
    return (
        image.reshape(g, p, g, p, cfg.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(g * g, p * p * cfg.channels)
    )


def patch_embed(image: np.ndarray, state: ModelState, cfg: ViTConfig) -> Tensor:
    patches = Tensor(extract_patches(np.asarray(image, dtype=np.float64), cfg))
    return bias_add(matmul(patches, state["patch.w"]), state["patch.b"])


def forward(
    image: np.ndarray,
    state: ModelState,
    cfg: ViTConfig,
    residual_gain: float = 1.0,
) -> Tuple[Tensor, List[AttentionTrace]]:
    """Logits for one image; per-block traces when the variant is residual.

    ``residual_gain`` is the test hook for zeroing the best-head residual.
    """
    tokens = concat([state["cls"], patch_embed(image, state, cfg)], axis=0)
    x = tokens + state["pos"]

    traces: List[AttentionTrace] = []
    for i in range(cfg.depth):
        normed = layer_norm(x, state[f"block{i}.ln1.gamma"], state[f"block{i}.ln1.beta"])
        weights = _attn_weights(state, i)
        if cfg.attention_variant == "residual":
            attn_out, trace = multi_head_attention_residual(
                normed, weights, cfg.heads, cfg.norm_policy, residual_gain
            )
            traces.append(trace)
        else:
            attn_out = multi_head_attention_standard(normed, weights, cfg.heads)
        x = x + attn_out

        normed = layer_norm(x, state[f"block{i}.ln2.gamma"], state[f"block{i}.ln2.beta"])
        hidden = gelu(bias_add(matmul(normed, state[f"block{i}.mlp.w1"]),
                               state[f"block{i}.mlp.b1"]))
        mlp_out = bias_add(matmul(hidden, state[f"block{i}.mlp.w2"]),
                           state[f"block{i}.mlp.b2"])
        x = x + mlp_out

    x = layer_norm(x, state["final_ln.gamma"], state["final_ln.beta"])
    cls_row = take_row(x, 0)
    logits = bias_add(matmul(cls_row, state["head.w"]), state["head.b"])
    return reshape(logits, (cfg.num_classes,)), traces


# ------------------------------------------------------------- checkpointing


def save_checkpoint(path, cfg: ViTConfig, state: ModelState) -> None:
    """Self-describing JSON checkpoint: config plus named row-major tensors.

    Floats serialize via repr and round-trip bit-exactly.
    """
    payload = {
        "format": "vitra-checkpoint-v1",
        "config": asdict(cfg),
        "params": {
            p.name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for p in state.parameters()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> Tuple[ViTConfig, ModelState]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "vitra-checkpoint-v1":
        raise ConfigError(f"{path}: not a vitra checkpoint")
    cfg = ViTConfig(**payload["config"])
    cfg.validate()
    reference = init_params(cfg)
    state = ModelState()
    for name in reference.names():
        if name not in payload["params"]:
            raise ConfigError(f"{path}: missing parameter {name!r}")
        entry = payload["params"][name]
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != reference[name].shape:
            raise ConfigError(
                f"{path}: parameter {name!r} has shape {data.shape}, "
                f"expected {reference[name].shape}"
            )
        state.register(name, data)
    return cfg, state
