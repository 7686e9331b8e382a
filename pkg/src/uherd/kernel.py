"""Gaussian kernel on fixed embeddings, radius adaptation and Lipschitz constant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from uherd.core import FeatureMatrix, PreconditionError

FAMILIES = ("gaussian",)

# Elements per temporary (rows x cols x dim) block in pairwise computations.
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class KernelConfig:
    family: str = "gaussian"
    sigma: float = 1.0
    normalize_features: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PreconditionError(f"unsupported kernel family {self.family!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise PreconditionError(f"sigma must be positive and finite, got {self.sigma}")

    def with_sigma(self, sigma: float) -> "KernelConfig":
        return KernelConfig(self.family, float(sigma), self.normalize_features)


def prepare_features(features, cfg: KernelConfig | None = None) -> np.ndarray:
    """Return the float64 matrix the kernel sees (row-normalized if configured)."""
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    if cfg is not None and cfg.normalize_features:
        norms = np.sqrt((values * values).sum(axis=1, keepdims=True))
        values = values / np.where(norms > 0, norms, 1.0)
    return values


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(len(a), len(b))``.

    Differences are formed explicitly (no ``|a|^2 + |b|^2 - 2ab`` expansion) so
    every entry is exactly symmetric, nonnegative and identical to the scalar
    evaluation of the same pair.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise PreconditionError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    out = np.empty((a.shape[0], b.shape[0]))
    step = max(1, _BLOCK_ELEMENTS // max(1, b.shape[0] * a.shape[1]))
    for start in range(0, a.shape[0], step):
        diff = a[start:start + step, None, :] - b[None, :, :]
        out[start:start + step] = (diff * diff).sum(axis=-1)
    return out


def kernel_matrix(a: np.ndarray, b: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    return np.exp(-pairwise_sq_dists(a, b) / (cfg.sigma * cfg.sigma))


def kernel_value(xi, xj, cfg: KernelConfig) -> float:
    xi = prepare_features(np.asarray(xi, dtype=np.float64).ravel(), cfg)
    xj = prepare_features(np.asarray(xj, dtype=np.float64).ravel(), cfg)
    return float(kernel_matrix(xi, xj, cfg)[0, 0])


def kernel_row(candidate: int, pool: FeatureMatrix, cfg: KernelConfig) -> np.ndarray:
    """Kernel between every pool row and the ``candidate`` row."""
    if not 0 <= candidate < pool.rows:
        raise PreconditionError(f"candidate {candidate} out of range for pool of {pool.rows}")
    values = prepare_features(pool, cfg)
    return kernel_matrix(values, values[candidate:candidate + 1], cfg)[:, 0]


def adapt_radius(labeled_features, fallback: float) -> float:
    """Minimum distance between distinct labeled embeddings.

    Coincident rows are skipped; ``fallback`` is returned when fewer than two
    distinct rows exist.
    """
    rows = np.atleast_2d(np.asarray(labeled_features, dtype=np.float64))
    if rows.shape[0] < 2:
        return float(fallback)
    sq = pairwise_sq_dists(rows, rows)
    upper = sq[np.triu_indices(rows.shape[0], k=1)]
    positive = upper[upper > 0]
    if positive.size == 0:
        return float(fallback)
    return float(np.sqrt(positive.min()))


def lipschitz_bound(cfg: KernelConfig) -> float:
    if cfg.family != "gaussian":
        raise PreconditionError(f"no Lipschitz constant known for family {cfg.family!r}")
    return math.sqrt(2.0 / math.e) / cfg.sigma


def median_pair_distance(features, rng: np.random.Generator, num_pairs: int = 1000) -> float:
    """Median Euclidean distance over random pairs of distinct rows.

    Used as the default lengthscale before any labels exist.
    """
    values = prepare_features(features)
    n = values.shape[0]
    if n < 2:
        return 1.0
    i = rng.integers(0, n, size=num_pairs)
    j = (i + rng.integers(1, n, size=num_pairs)) % n
    diff = values[i] - values[j]
    dist = np.sqrt((diff * diff).sum(axis=1))
    med = float(np.median(dist))
    return med if med > 0 else 1.0
