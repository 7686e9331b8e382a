"""Synthetic pools and CSV ingestion."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from uherd.core import FeatureMatrix


class DataFormatError(ValueError):
    """A data file could not be parsed; the message names the file and line."""


def generate_halfmoons(n: int, noise: float = 0.1, seed=0) -> tuple[FeatureMatrix, np.ndarray]:
    """Two interleaving unit half-circles.

    Class 0 is the upper arc ``(cos t, sin t)``; class 1 is the lower arc
    ``(1 - cos t, 0.5 - sin t)``. Class 0 gets ``ceil(n/2)`` points. Rows are
    shuffled so class membership does not follow the index order.
    """
    if n < 2:
        raise ValueError("need at least two points")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    n0 = math.ceil(n / 2)
    n1 = n - n0
    t0 = np.linspace(0.0, math.pi, n0)
    t1 = np.linspace(0.0, math.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        x = x + rng.normal(scale=noise, size=x.shape)
    order = rng.permutation(n)
    return FeatureMatrix(x[order]), y[order]


def generate_blobs(centers: Sequence[Sequence[float]], per_center: int, std: float = 1.0,
                   seed=0) -> tuple[FeatureMatrix, np.ndarray]:
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.shape[0] < 1:
        raise ValueError("need at least one center")
    if per_center < 1:
        raise ValueError("per_center must be >= 1")
    rng = np.random.default_rng(seed)
    x = np.repeat(centers, per_center, axis=0)
    if std > 0:
        x = x + rng.normal(scale=std, size=x.shape)
    y = np.repeat(np.arange(centers.shape[0]), per_center)
    return FeatureMatrix(x), y


def read_feature_csv(path) -> np.ndarray:
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cells = line.split(",")
            try:
                row = [float(c) for c in cells]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell in {line!r}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
            if not all(math.isfinite(v) for v in row):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def read_int_lines(path, what: str = "label") -> np.ndarray:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                out.append(int(text))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: {what} {text!r} is not an integer") from None
    return np.asarray(out, dtype=np.int64)


def load_dataset(feature_path, label_path=None) -> tuple[FeatureMatrix, np.ndarray | None]:
    """Read a headerless feature CSV and (optionally) an aligned label file."""
    x = read_feature_csv(feature_path)
    if label_path is None:
        return FeatureMatrix(x), None
    y = read_int_lines(label_path)
    if y.size != x.shape[0]:
        raise DataFormatError(
            f"{feature_path} has {x.shape[0]} rows but {label_path} has {y.size} labels")
    if y.size and y.min() < 0:
        raise DataFormatError(f"{label_path}: labels must be nonnegative")
    return FeatureMatrix(x), y


def write_dataset(features, labels, feature_path, label_path) -> None:
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    with open(feature_path, "w", encoding="utf-8", newline="\n") as fh:
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(label_path, "w", encoding="utf-8", newline="\n") as fh:
        for lab in labels:
            fh.write(f"{int(lab)}\n")
