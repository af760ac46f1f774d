"""Small-scale vision transformer with residual best-head attention,
built on an in-package reverse-mode autodiff engine."""

from .attention import (
    AttentionTrace,
    AttentionWeights,
    head_norm,
    multi_head_attention_residual,
    multi_head_attention_standard,
    scaled_dot_attention,
    select_best_head,
)
from .autodiff import FiniteDiffReport, GradTape, Parameter, finite_diff_check
from .data import LabeledDataset, load_folder_dataset, split, synth_dataset
from .tensor import Tensor
from .train import EvalReport, TrainConfig, cross_entropy, evaluate, train_epoch
from .vit import ModelState, ViTConfig, forward, init_params, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace",
    "AttentionWeights",
    "EvalReport",
    "FiniteDiffReport",
    "GradTape",
    "LabeledDataset",
    "ModelState",
    "Parameter",
    "Tensor",
    "TrainConfig",
    "ViTConfig",
    "cross_entropy",
    "evaluate",
    "finite_diff_check",
    "forward",
    "head_norm",
    "init_params",
    "load_checkpoint",
    "load_folder_dataset",
    "multi_head_attention_residual",
    "multi_head_attention_standard",
    "save_checkpoint",
    "scaled_dot_attention",
    "select_best_head",
    "split",
    "synth_dataset",
    "train_epoch",
]
