"""Command-line entry point: train / eval / grad-check / bench.

Exit codes: 0 success, 2 configuration problem, 3 numeric failure.
Run configuration is a flat key=value text file; command-line flags
override file values. Every run serializes its merged configuration next
to its outputs so results are reproducible from the artifacts alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from . import train as train_mod
from . import vit as vit_mod
from .autodiff import finite_diff_check
from .errors import NumericError, UsageError, VitraError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_VIT_KEYS = {
    "image_size": int, "channels": int, "patch_size": int, "embed_dim": int,
    "depth": int, "heads": int, "mlp_dim": int, "num_classes": int,
    "attention_variant": str, "norm_policy": str, "seed": int,
}
_TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "lr": float, "optimizer": str,
}
_RUN_KEYS = {
    "data": str, "out": str, "split_ratio": float,
    "synth_per_class": int, "synth_noise": float,
}


def parse_config_file(path) -> dict:
    """Flat key=value lines; '#' comments and blank lines ignored."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(raw: dict) -> dict:
    typed = {}
    all_keys = {**_VIT_KEYS, **_TRAIN_KEYS, **_RUN_KEYS}
    for key, value in raw.items():
        if key not in all_keys:
            raise UsageError(f"unknown config key {key!r}")
        typed[key] = all_keys[key](value)
    return typed


def build_run_config(args) -> dict:
    """Merge defaults <- config file <- CLI overrides into one flat dict."""
    merged = {
        "image_size": 16, "channels": 1, "patch_size": 4, "embed_dim": 16,
        "depth": 2, "heads": 4, "mlp_dim": 32, "num_classes": 4,
        "attention_variant": "residual", "norm_policy": "induced", "seed": 0,
        "epochs": 30, "batch_size": 16, "lr": 1e-3, "optimizer": "adam",
        "data": "synthetic", "out": "runs/out", "split_ratio": 0.8,
        "synth_per_class": 50, "synth_noise": 0.1,
    }
    if getattr(args, "config", None):
        merged.update(_coerce(parse_config_file(args.config)))
    overrides = {
        "seed": getattr(args, "seed", None),
        "attention_variant": getattr(args, "variant", None),
        "norm_policy": getattr(args, "norm", None),
        "data": getattr(args, "data", None),
        "out": getattr(args, "out", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "lr": getattr(args, "lr", None),
    }
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _vit_config(run: dict) -> vit_mod.ViTConfig:
    cfg = vit_mod.ViTConfig(**{k: run[k] for k in _VIT_KEYS})
    cfg.validate()
    return cfg


def _train_config(run: dict) -> train_mod.TrainConfig:
    tcfg = train_mod.TrainConfig(
        epochs=run["epochs"], batch_size=run["batch_size"], lr=run["lr"],
        optimizer=run["optimizer"], seed=run["seed"],
    )
    tcfg.validate()
    return tcfg


def _load_data(run: dict) -> data_mod.LabeledDataset:
    if run["data"] == "synthetic":
        return data_mod.synth_dataset(
            num_classes=run["num_classes"],
            per_class=run["synth_per_class"],
            image_size=run["image_size"],
            seed=run["seed"],
            noise=run["synth_noise"],
        )
    root = Path(run["data"])
    if not root.is_dir():
        raise UsageError(f"dataset path {root} does not exist")
    ds = data_mod.load_folder_dataset(root, run["image_size"])
    if len(ds.class_names) != run["num_classes"]:
        raise UsageError(
            f"dataset has {len(ds.class_names)} classes but config says "
            f"{run['num_classes']}"
        )
    return ds


def _folder_to_config_images(ds, channels):
    """Folder images are RGB; collapse to one channel when the model wants it."""
    if channels == 3:
        return ds
    converted = [(img.mean(axis=2, keepdims=True), label) for img, label in ds.samples]
    return data_mod.LabeledDataset(converted, list(ds.class_names), ds.skipped)


def _write_run_config(run: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run_config.json", "w") as fh:
        json.dump(run, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def cmd_train(args) -> int:
    run = build_run_config(args)
    cfg = _vit_config(run)
    tcfg = _train_config(run)
    ds = _load_data(run)
    if run["data"] != "synthetic":
        ds = _folder_to_config_images(ds, cfg.channels)
    train_ds, test_ds = data_mod.split(ds, run["split_ratio"], seed=run["seed"])

    out = Path(run["out"])
    _write_run_config(run, out)
    csv_path = out / "epochs.csv"
    csv_path.unlink(missing_ok=True)

    state = vit_mod.init_params(cfg)
    optimizer = train_mod.make_optimizer(tcfg)
    for epoch in range(tcfg.epochs):
        epoch_loss = train_mod.train_epoch(state, cfg, train_ds.samples, tcfg,
                                           optimizer, epoch)
        train_report = train_mod.evaluate(state, cfg, train_ds.samples)
        test_report = train_mod.evaluate(state, cfg, test_ds.samples)
        test_loss = train_mod.mean_loss(state, cfg, test_ds.samples)
        train_mod.append_epoch_csv(csv_path, epoch, "train", train_report.accuracy,
                                   epoch_loss, header=(epoch == 0))
        train_mod.append_epoch_csv(csv_path, epoch, "test", test_report.accuracy,
                                   test_loss)
        print(
            f"epoch {epoch}: loss {epoch_loss:.4f} "
            f"train acc {train_report.accuracy:.4f} test acc {test_report.accuracy:.4f}"
        )

    vit_mod.save_checkpoint(out / "checkpoint.json", cfg, state)
    if args.dump_attention and cfg.attention_variant == "residual":
        final_report, traces = train_mod.evaluate(state, cfg, test_ds.samples,
                                                  collect_traces=True)
        with open(out / "attention_trace.json", "w") as fh:
            json.dump(traces, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
    else:
        final_report = train_mod.evaluate(state, cfg, test_ds.samples)
    (out / "eval.json").write_text(final_report.to_json() + "\n")
    print(final_report.format_table(ds.class_names))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, state = vit_mod.load_checkpoint(args.checkpoint)
    run = build_run_config(args)
    run.update({k: getattr(cfg, k) for k in _VIT_KEYS})
    ds = _load_data(run)
    if run["data"] != "synthetic":
        ds = _folder_to_config_images(ds, cfg.channels)

    if args.dump_attention and cfg.attention_variant == "residual":
        report, traces = train_mod.evaluate(state, cfg, ds.samples, collect_traces=True)
    else:
        report, traces = train_mod.evaluate(state, cfg, ds.samples), None

    print(report.format_table(ds.class_names))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(report.to_json() + "\n")
        if traces is not None:
            with open(out / "attention_trace.json", "w") as fh:
                json.dump(traces, fh, sort_keys=True, separators=(",", ":"))
                fh.write("\n")
    else:
        print(report.to_json())
    return EXIT_OK


GRAD_CHECK_THRESHOLD = 1e-5


def cmd_grad_check(args) -> int:
    run = build_run_config(args)
    # Tiny geometry unless a config file says otherwise: the check is O(#params).
    if not getattr(args, "config", None):
        run.update({"image_size": 8, "patch_size": 4, "embed_dim": 8, "heads": 2,
                    "depth": 1, "mlp_dim": 16, "num_classes": 3, "channels": 1})
    cfg = _vit_config(run)
    state = vit_mod.init_params(cfg)
    rng = np.random.default_rng(run["seed"])
    image = rng.uniform(0.0, 1.0, size=(cfg.image_size, cfg.image_size, cfg.channels))
    label = int(rng.integers(cfg.num_classes))

    def loss_fn():
        logits, _ = vit_mod.forward(image, state, cfg)
        return train_mod.cross_entropy(logits, label)

    report = finite_diff_check(loss_fn, state.parameters(), eps=1e-5)
    print(report)
    return EXIT_OK if report.max_rel_error < GRAD_CHECK_THRESHOLD else EXIT_NUMERIC


BENCH_RATIO_BOUND = 1.15
BENCH_SLOPE_RANGE = (1.6, 2.4)


def cmd_bench(args) -> int:
    if args.kernels:
        rows = bench_mod.bench_kernel_backends(reps=args.reps, seed=args.seed or 0)
        bench_mod.write_kernel_csv(rows, args.out_csv)
        for row in rows:
            print(
                f"{row['kernel']:>16s} {row['backend']:>6s} "
                f"{row['rows']:5d}x{row['cols']:<5d} {row['median_seconds']:.6f}s"
            )
        print(f"wrote {args.out_csv}")
        return EXIT_OK

    ns = [int(v) for v in args.ns.split(",")]
    results = bench_mod.bench_attention(ns, h=args.heads, d_head=args.d_head,
                                        reps=args.reps, seed=args.seed or 0)
    bench_mod.write_csv(results, args.out_csv)
    ratios = bench_mod.overhead_ratios(results)
    slope = next(r.slope for r in results if r.variant == "standard")
    for r in results:
        print(f"{r.variant:>8s} n={r.n:4d} median {r.median_seconds:.6f}s")
    print("overhead ratios:", {n: round(v, 4) for n, v in sorted(ratios.items())})
    print(f"standard-variant slope: {slope:.4f}")
    print(f"wrote {args.out_csv}")

    ok = all(v <= BENCH_RATIO_BOUND for v in ratios.values())
    ok = ok and BENCH_SLOPE_RANGE[0] <= slope <= BENCH_SLOPE_RANGE[1]
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitra",
        description="Vision transformer with residual best-head attention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=("standard", "residual"))
        p.add_argument("--norm", choices=("entrywise", "induced"))
        p.add_argument("--data", help="dataset folder or 'synthetic'")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dump-attention", action="store_true",
                       help="emit per-sample head norms and selections as JSON")

    p_train = sub.add_parser("train", help="train a model and evaluate it")
    common(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("checkpoint")
    p_eval.set_defaults(fn=cmd_eval)

    p_grad = sub.add_parser("grad-check",
                            help="finite-difference check of tape gradients")
    common(p_grad)
    p_grad.set_defaults(fn=cmd_grad_check)

    p_bench = sub.add_parser("bench", help="attention scaling benchmark")
    common(p_bench)
    p_bench.add_argument("--ns", default="64,128,256,512",
                         help="comma-separated sequence lengths")
    p_bench.add_argument("--heads", type=int, default=8)
    p_bench.add_argument("--d-head", type=int, default=32)
    p_bench.add_argument("--reps", type=int, default=9)
    p_bench.add_argument("--out-csv", default="bench.csv")
    p_bench.add_argument("--kernels", action="store_true",
                         help="compare numba vs numpy kernel backends instead")
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (VitraError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
