"""Dataset ingestion: folder-per-class trees, PPM/PNG decoding, splits,
and a seeded synthetic corpus for desk-scale runs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .errors import DataError, UsageError

IMAGE_EXTENSIONS = (".png", ".ppm")


@dataclass
class LabeledDataset:
    """Images as [H, W, C] float64 arrays in [0, 1] with integer labels."""

    samples: List[Tuple[np.ndarray, int]]
    class_names: List[str]
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.samples)

    def per_class_counts(self) -> List[int]:
        counts = [0] * len(self.class_names)
        for _, label in self.samples:
            counts[label] += 1
        return counts


def decode_ppm(raw: bytes) -> np.ndarray:
    """Decode a binary (P6) Netpbm image to a uint8 [H, W, 3] array.

    Header tokens are whitespace-delimited; '#' starts a comment running to
    end of line. Only maxval 255 is supported.
    """
    if not raw.startswith(b"P6"):
        raise DataError("not a P6 PPM file")

    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval, then raster

    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DataError(f"bad PPM header token: {exc}") from exc
    if maxval != 255:
        raise DataError(f"unsupported PPM maxval {maxval} (only 255)")
    expected = width * height * 3
    raster = raw[pos : pos + expected]
    if len(raster) != expected:
        raise DataError(f"PPM raster holds {len(raster)} bytes, expected {expected}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def _decode_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".ppm":
        return decode_ppm(path.read_bytes())
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def resize_nearest(image: np.ndarray, target: int) -> np.ndarray:
    """Nearest-neighbor resize to target x target; bit-deterministic."""
    h, w = image.shape[:2]
    rows = (np.arange(target) * h) // target
    cols = (np.arange(target) * w) // target
    return image[rows][:, cols]


def load_folder_dataset(root, target_size: int) -> LabeledDataset:
    """Load a root/<class>/<image>.{png,ppm} tree.

    Class names are the sorted subdirectory names; files load in
    lexicographic order. Undecodable files are skipped with a warning; a
    class with no decodable images is a hard error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) < 2:
        raise DataError(f"{root}: need at least 2 class folders, found {len(class_dirs)}")

    samples: List[Tuple[np.ndarray, int]] = []
    skipped = 0
    class_names = [d.name for d in class_dirs]
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            f for f in class_dir.iterdir()
            if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS
        )
        loaded = 0
        for f in files:
            try:
                pixels = _decode_image(f)
            except (DataError, OSError) as exc:
                warnings.warn(f"skipping undecodable image {f}: {exc}")
                skipped += 1
                continue
            image = resize_nearest(pixels, target_size).astype(np.float64) / 255.0
            samples.append((image, label))
            loaded += 1
        if loaded == 0:
            raise DataError(f"class folder {class_dir} has no decodable images")
    return LabeledDataset(samples=samples, class_names=class_names, skipped=skipped)


def split(
    ds: LabeledDataset, ratio: float = 0.8, seed: int = 0
) -> Tuple[LabeledDataset, LabeledDataset]:
    """Stratified train/test split: floor(ratio * count) per class to train.

    Shuffling is seeded and per-class; the result is a disjoint, exhaustive
    partition of the input samples.
    """
    if not 0.0 < ratio < 1.0:
        raise UsageError(f"split ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    by_class: List[List[int]] = [[] for _ in ds.class_names]
    for idx, (_, label) in enumerate(ds.samples):
        by_class[label].append(idx)

    train_idx: List[int] = []
    test_idx: List[int] = []
    for label, indices in enumerate(by_class):
        if len(indices) < 2:
            raise DataError(
                f"class {ds.class_names[label]!r} has {len(indices)} sample(s); "
                "need >= 2 to stratify"
            )
        order = rng.permutation(len(indices))
        cut = int(ratio * len(indices))
        train_idx.extend(indices[i] for i in order[:cut])
        test_idx.extend(indices[i] for i in order[cut:])

    train = LabeledDataset([ds.samples[i] for i in sorted(train_idx)], list(ds.class_names))
    test = LabeledDataset([ds.samples[i] for i in sorted(test_idx)], list(ds.class_names))
    return train, test


def synth_dataset(
    num_classes: int,
    per_class: int,
    image_size: int,
    seed: int = 0,
    noise: float = 0.1,
) -> LabeledDataset:
    """Seeded synthetic corpus: each class brightens one image quadrant.

    Pixel range stays inside [0, 1] without clipping for noise <= 0.1, so
    the generator is exactly reproducible and linearly separable at low
    noise. Classes beyond 4 reuse quadrants at reduced brightness.
    """
    if num_classes < 2:
        raise UsageError("synth_dataset: need at least 2 classes")
    rng = np.random.default_rng(seed)
    half = image_size // 2
    quadrants = [
        (slice(0, half), slice(0, half)),
        (slice(0, half), slice(half, image_size)),
        (slice(half, image_size), slice(0, half)),
        (slice(half, image_size), slice(half, image_size)),
    ]
    samples: List[Tuple[np.ndarray, int]] = []
    for label in range(num_classes):
        rows, cols = quadrants[label % 4]
        brightness = 0.6 / (1 + label // 4)
        base = np.full((image_size, image_size, 1), 0.2)
        base[rows, cols, :] += brightness
        for _ in range(per_class):
            jitter = rng.uniform(-noise, noise, size=base.shape)
            samples.append((base + jitter, label))
    return LabeledDataset(
        samples=samples, class_names=[f"class{k}" for k in range(num_classes)]
    )
