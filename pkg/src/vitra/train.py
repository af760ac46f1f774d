"""Loss, optimizers, the training loop, and the evaluation metric suite."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import vit
from .autodiff import GradTape, Parameter
from .errors import NumericError, UsageError
from .tensor import Tensor, make_node
from .vit import ModelState, ViTConfig


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], in log-sum-exp form; finite for finite logits."""
    if logits.ndim != 1:
        raise UsageError(f"cross_entropy: logits must be 1-D, got {logits.shape}")
    num_classes = logits.shape[0]
    if not 0 <= label < num_classes:
        raise UsageError(f"cross_entropy: label {label} out of range [0,{num_classes})")
    z = logits.data
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    loss = lse - z[label]

    def backward(g):
        probs = np.exp(z - lse)
        probs[label] -= 1.0
        return (g * probs,)

    return make_node(np.asarray(loss), (logits,), backward, "cross_entropy")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr < 0:
            raise UsageError("epochs/batch_size must be positive, lr non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise UsageError(f"unknown optimizer {self.optimizer!r}")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Sequence[Parameter]) -> None:
        for p in params:
            p.data -= self.lr * p.grad


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, params: Sequence[Parameter]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in params:
            m = self._m.setdefault(p.name, np.zeros_like(p.data))
            v = self._v.setdefault(p.name, np.zeros_like(p.data))
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad**2
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(tcfg: TrainConfig):
    return Adam(tcfg.lr) if tcfg.optimizer == "adam" else SGD(tcfg.lr)


def train_epoch(
    state: ModelState,
    cfg: ViTConfig,
    samples: Sequence[Tuple[np.ndarray, int]],
    tcfg: TrainConfig,
    optimizer,
    epoch: int,
) -> float:
    """One pass of seeded-shuffle minibatch steps; returns the epoch-mean loss."""
    if not samples:
        raise UsageError("train_epoch: empty dataset")
    order = np.random.default_rng(tcfg.seed * 100003 + epoch).permutation(len(samples))
    params = state.parameters()
    losses = []
    for start in range(0, len(order), tcfg.batch_size):
        batch = order[start : start + tcfg.batch_size]
        for p in params:
            p.zero_grad()
        batch_loss = 0.0
        for idx in batch:
            image, label = samples[idx]
            with GradTape() as tape:
                logits, _ = vit.forward(image, state, cfg)
                loss = cross_entropy(logits, int(label))
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss in batch starting at sample {start}"
                )
            tape.backward(loss)
            batch_loss += value
            losses.append(value)
        inv = 1.0 / len(batch)
        for p in params:
            p.grad *= inv
        optimizer.step(params)
    return float(np.mean(losses))


def mean_loss(state, cfg, samples) -> float:
    total = 0.0
    for image, label in samples:
        logits, _ = vit.forward(image, state, cfg)
        total += float(cross_entropy(logits, int(label)).data)
    return total / len(samples)


# ----------------------------------------------------------------- metrics


@dataclass
class EvalReport:
    """Confusion matrix (rows=truth, cols=prediction) plus derived metrics."""

    confusion: np.ndarray
    accuracy: float
    precision_per_class: List[float]
    recall_per_class: List[float]
    f1_per_class: List[float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    zero_denominator_classes: List[int] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "precision_per_class": self.precision_per_class,
            "recall_per_class": self.recall_per_class,
            "f1_per_class": self.f1_per_class,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def format_table(self, class_names: Optional[Sequence[str]] = None) -> str:
        k = self.confusion.shape[0]
        names = list(class_names) if class_names else [f"class{i}" for i in range(k)]
        lines = ["confusion (rows=truth, cols=pred):"]
        for i in range(k):
            lines.append(f"  {names[i]:>12s} " +
                         " ".join(f"{v:6d}" for v in self.confusion[i]))
        lines.append(f"accuracy: {self.accuracy:.4f}")
        lines.append(f"{'class':>12s} {'prec':>8s} {'recall':>8s} {'f1':>8s}")
        for i in range(k):
            flag = "  (zero denominator)" if i in self.zero_denominator_classes else ""
            lines.append(
                f"{names[i]:>12s} {self.precision_per_class[i]:8.4f} "
                f"{self.recall_per_class[i]:8.4f} {self.f1_per_class[i]:8.4f}{flag}"
            )
        lines.append(
            f"{'macro':>12s} {self.macro_precision:8.4f} "
            f"{self.macro_recall:8.4f} {self.macro_f1:8.4f}"
        )
        return "\n".join(lines)


def confusion_matrix(truths, preds, num_classes: int) -> np.ndarray:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(truths, preds):
        conf[int(t), int(p)] += 1
    return conf


def report_from_confusion(conf: np.ndarray) -> EvalReport:
    """Derive accuracy and per-class / macro precision, recall, F1.

    Classes with an empty denominator report 0 and are flagged, never NaN.
    """
    conf = np.asarray(conf, dtype=np.int64)
    k = conf.shape[0]
    total = int(conf.sum())
    accuracy = float(np.trace(conf)) / total if total else 0.0

    precision, recall, f1, flagged = [], [], [], []
    for c in range(k):
        tp = int(conf[c, c])
        fp = int(conf[:, c].sum()) - tp
        fn = int(conf[c, :].sum()) - tp
        zero = False
        if tp + fp == 0:
            prec, zero = 0.0, True
        else:
            prec = tp / (tp + fp)
        if tp + fn == 0:
            rec, zero = 0.0, True
        else:
            rec = tp / (tp + fn)
        if prec + rec == 0.0:
            f, zero = 0.0, True
        else:
            f = 2.0 * prec * rec / (prec + rec)
        precision.append(prec)
        recall.append(rec)
        f1.append(f)
        if zero:
            flagged.append(c)

    return EvalReport(
        confusion=conf,
        accuracy=accuracy,
        precision_per_class=precision,
        recall_per_class=recall,
        f1_per_class=f1,
        macro_precision=float(np.mean(precision)),
        macro_recall=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        zero_denominator_classes=flagged,
    )


def evaluate(
    state: ModelState,
    cfg: ViTConfig,
    samples: Sequence[Tuple[np.ndarray, int]],
    collect_traces: bool = False,
):
    """Argmax predictions over ``samples`` -> EvalReport (and traces if asked)."""
    if not samples:
        raise UsageError("evaluate: empty dataset")
    truths, preds, all_traces = [], [], []
    for image, label in samples:
        logits, traces = vit.forward(image, state, cfg)
        truths.append(int(label))
        preds.append(int(np.argmax(logits.data)))
        if collect_traces:
            all_traces.append([t.to_jsonable() for t in traces])
    report = report_from_confusion(confusion_matrix(truths, preds, cfg.num_classes))
    if collect_traces:
        return report, all_traces
    return report


def append_epoch_csv(path, epoch: int, split: str, accuracy: float, loss: float,
                     header: bool = False) -> None:
    """Append one `epoch,split,accuracy,loss` row (training-curve data)."""
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(["epoch", "split", "accuracy", "loss"])
        writer.writerow([epoch, split, repr(float(accuracy)), repr(float(loss))])
