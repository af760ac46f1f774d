"""Wall-time comparison of the two attention variants across sequence
lengths, plus a kernel-backend (numba vs numpy) microbenchmark."""

from __future__ import annotations

import csv
import gc
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kernels
from .attention import (
    AttentionWeights,
    multi_head_attention_residual,
    multi_head_attention_standard,
)
from .errors import UsageError
from .tensor import Tensor


@dataclass
class BenchResult:
    variant: str
    n: int
    h: int
    d_head: int
    reps: int
    median_seconds: float
    slope: Optional[float] = None  # filled per variant after the log-log fit


def _random_weights(rng: np.random.Generator, d_model: int) -> AttentionWeights:
    def w():
        return Tensor(rng.normal(0.0, 0.02, size=(d_model, d_model)))

    def b():
        return Tensor(np.zeros(d_model))

    return AttentionWeights(w(), b(), w(), b(), w(), b(), w(), b())


def _time_call(fn, reps: int) -> List[float]:
    fn()  # warmup run, discarded
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def _timer_resolution() -> float:
    res = time.get_clock_info("perf_counter").resolution
    return max(res, 1e-9)


def fit_loglog_slope(ns: Sequence[int], times: Sequence[float]) -> float:
    """Least-squares slope of log(time) against log(n)."""
    return float(np.polyfit(np.log(np.asarray(ns, dtype=float)),
                            np.log(np.asarray(times, dtype=float)), 1)[0])


def bench_attention(
    ns: Sequence[int],
    h: int = 8,
    d_head: int = 32,
    reps: int = 9,
    seed: int = 0,
) -> List[BenchResult]:
    """Median-of-reps timing of both variants on identical random inputs.

    The scaling exponent is fit on the top half of the n range, where the
    quadratic term dominates. If the timer is too coarse for a measurement
    (resolution above 1% of the median) the rep count is widened once and a
    note is printed.
    """
    ns = sorted(set(int(n) for n in ns))
    if any(n < 8 for n in ns):
        raise UsageError("bench_attention: all sequence lengths must be >= 8")
    if reps < 5:
        raise UsageError("bench_attention: need at least 5 repetitions")

    rng = np.random.default_rng(seed)
    d_model = h * d_head
    weights = _random_weights(rng, d_model)
    resolution = _timer_resolution()

    medians: Dict[str, Dict[int, float]] = {"standard": {}, "residual": {}}
    used_reps: Dict[int, int] = {}
    for n in ns:
        x = Tensor(rng.normal(0.0, 1.0, size=(n, d_model)))
        run_reps = reps
        while True:
            # Interleave the variants within each repetition so scheduler
            # drift hits both timing series equally.
            multi_head_attention_standard(x, weights, h)  # warmup, discarded
            multi_head_attention_residual(x, weights, h)
            gc.collect()
            # Cyclic GC pauses would land unevenly on whichever variant happens
            # to allocate past the threshold, so it is off while timing.
            gc.disable()
            try:
                std_times, res_times = [], []
                for _ in range(run_reps):
                    # Each rep records the best of several passes: scheduler
                    # preemption only ever inflates a pass, so the min is the
                    # clean reading. Small n gets more passes because a single
                    # call is close to the noise floor there.
                    passes = 5 if n >= 256 else 11
                    std_best, res_best = math.inf, math.inf
                    for _ in range(passes):
                        t0 = time.perf_counter()
                        multi_head_attention_standard(x, weights, h)
                        t1 = time.perf_counter()
                        multi_head_attention_residual(x, weights, h)
                        t2 = time.perf_counter()
                        std_best = min(std_best, t1 - t0)
                        res_best = min(res_best, t2 - t1)
                    std_times.append(std_best)
                    res_times.append(res_best)
            finally:
                gc.enable()
            med = min(float(np.median(std_times)), float(np.median(res_times)))
            if resolution <= 0.01 * med or run_reps >= 8 * reps:
                break
            run_reps *= 2
            print(f"bench: widened reps to {run_reps} at n={n} (timer resolution)")
        medians["standard"][n] = float(np.median(std_times))
        medians["residual"][n] = float(np.median(res_times))
        used_reps[n] = run_reps

    top_half = ns[len(ns) // 2 :] if len(ns) > 1 else ns
    results = []
    for variant in ("standard", "residual"):
        slope = (
            fit_loglog_slope(top_half, [medians[variant][n] for n in top_half])
            if len(top_half) > 1
            else math.nan
        )
        for n in ns:
            results.append(
                BenchResult(variant, n, h, d_head, used_reps[n],
                            medians[variant][n], slope)
            )
    return results


def overhead_ratios(results: Sequence[BenchResult]) -> Dict[int, float]:
    """Per-n residual/standard median time ratio."""
    std = {r.n: r.median_seconds for r in results if r.variant == "standard"}
    res = {r.n: r.median_seconds for r in results if r.variant == "residual"}
    return {n: res[n] / std[n] for n in std}


def write_csv(results: Sequence[BenchResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n", "h", "d_head", "reps", "median_seconds", "slope"])
        for r in results:
            writer.writerow(
                [r.variant, r.n, r.h, r.d_head, r.reps,
                 repr(r.median_seconds), repr(r.slope) if r.slope is not None else ""]
            )


# ------------------------------------------------- kernel backend comparison


def bench_kernel_backends(
    sizes: Sequence[int] = (64, 256, 1024),
    reps: int = 9,
    seed: int = 0,
) -> List[dict]:
    """Time each hot kernel under the numpy path and (if built) the numba path.

    Returns rows of {kernel, backend, rows, cols, median_seconds}. Useful for
    judging whether the compiled path pays off on a given machine.
    """
    rng = np.random.default_rng(seed)
    rows = []
    backends = [("numpy", False)]
    if kernels.HAVE_NUMBA:
        backends.append(("numba", True))
    for size in sizes:
        x = rng.normal(0.0, 1.0, size=(size, size))
        gamma = np.ones(size)
        beta = np.zeros(size)
        cases = {
            "softmax_rows": {
                "numpy": lambda: kernels.softmax_rows_np(x),
                "numba": (lambda: kernels.softmax_rows_nb(x))
                if kernels.HAVE_NUMBA else None,
            },
            "layer_norm_rows": {
                "numpy": lambda: kernels.layer_norm_rows_np(x, gamma, beta, 1e-5),
                "numba": (lambda: kernels.layer_norm_rows_nb(x, gamma, beta, 1e-5))
                if kernels.HAVE_NUMBA else None,
            },
            "gelu": {
                "numpy": lambda: kernels.gelu_np(x),
                "numba": (lambda: kernels.gelu_nb(x)) if kernels.HAVE_NUMBA else None,
            },
        }
        for kernel_name, impls in cases.items():
            for backend, _ in backends:
                fn = impls[backend]
                times = _time_call(fn, reps)
                rows.append(
                    {
                        "kernel": kernel_name,
                        "backend": backend,
                        "rows": size,
                        "cols": size,
                        "median_seconds": float(np.median(times)),
                    }
                )
    return rows


def write_kernel_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["kernel", "backend", "rows", "cols", "median_seconds"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
