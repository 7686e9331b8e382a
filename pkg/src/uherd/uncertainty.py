"""Uncertainty measures, temperature scaling and ECE-based temperature selection.

Every measure is scaled into ``[0, 1]`` with larger meaning more uncertain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from uherd.core import PreconditionError

MEASURES = ("margin", "entropy", "confidence", "constant", "thresholded", "alfamix", "custom")


@dataclass(frozen=True)
class PredictionSet:
    logits: np.ndarray
    temperature: float
    probabilities: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.probabilities.shape[1]

    def predicted(self) -> np.ndarray:
        return np.argmax(self.probabilities, axis=1)


@dataclass(frozen=True)
class UncertaintyProfile:
    values: np.ndarray
    measure: str = "custom"
    u_max: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.measure not in MEASURES:
            raise PreconditionError(f"unknown uncertainty measure {self.measure!r}")
        if not math.isfinite(self.u_max):
            raise PreconditionError("u_max must be finite")
        if values.size and (values.min() < 0 or values.max() > self.u_max):
            raise PreconditionError(f"uncertainties must lie in [0, {self.u_max}]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def scaled(self, factor: float) -> "UncertaintyProfile":
        return UncertaintyProfile(self.values * factor, self.measure, self.u_max * factor, self.temperature)


def scaled_softmax(logits, tau: float) -> PredictionSet:
    if not tau > 0:
        raise PreconditionError(f"temperature must be positive, got {tau}")
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not np.all(np.isfinite(logits)):
        raise PreconditionError("logits must be finite")
    z = logits / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    return PredictionSet(logits, float(tau), probs)


def _as_probs(p) -> np.ndarray:
    if isinstance(p, PredictionSet):
        return p.probabilities
    return np.asarray(p, dtype=np.float64)


def _top_two(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if probs.shape[-1] < 2:
        raise PreconditionError("at least two classes are required")
    part = np.partition(probs, -2, axis=-1)
    return part[..., -1], part[..., -2]


def margin_uncertainty(p):
    """``1 - (p_(1) - p_(2))``; 1 for a uniform row, 0 for a one-hot row."""
    p1, p2 = _top_two(_as_probs(p))
    return 1.0 - (p1 - p2)


def entropy_uncertainty(p):
    """Shannon entropy divided by ``ln K``."""
    probs = _as_probs(p)
    k = probs.shape[-1]
    if k < 2:
        raise PreconditionError("at least two classes are required")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    h = -terms.sum(axis=-1) / math.log(k)
    return np.clip(h, 0.0, 1.0)


def confidence_uncertainty(p):
    return 1.0 - _as_probs(p).max(axis=-1)


_MEASURE_FNS = {
    "margin": margin_uncertainty,
    "entropy": entropy_uncertainty,
    "confidence": confidence_uncertainty,
}


def uncertainty_profile(preds: PredictionSet, measure: str) -> UncertaintyProfile:
    """Evaluate ``measure`` row-wise on a prediction set."""
    if measure == "constant":
        return constant_uncertainty(preds.probabilities.shape[0], 1.0)
    try:
        fn = _MEASURE_FNS[measure]
    except KeyError:
        raise PreconditionError(f"cannot compute measure {measure!r} from predictions") from None
    values = np.clip(fn(preds.probabilities), 0.0, 1.0)
    return UncertaintyProfile(values, measure, 1.0, preds.temperature)


def constant_uncertainty(n: int, c: float) -> UncertaintyProfile:
    if c < 0:
        raise PreconditionError(f"constant uncertainty must be >= 0, got {c}")
    return UncertaintyProfile(np.full(n, float(c)), "constant", float(c))


def compute_ece(preds: PredictionSet, labels, n_bins: int = 15) -> float:
    """Expected calibration error with equal-width bins on the top probability.

    A sample with confidence ``c`` falls in bin ``b`` when ``b/n < c <= (b+1)/n``;
    empty bins contribute nothing.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    probs = preds.probabilities
    m, k = probs.shape
    if labels.size != m or m < 1:
        raise PreconditionError(f"need one label per prediction (got {labels.size} labels for {m} rows)")
    if n_bins < 1:
        raise PreconditionError("n_bins must be >= 1")
    if labels.min() < 0 or labels.max() >= k:
        raise PreconditionError(f"labels must lie in [0, {k})")
    conf = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels).astype(np.float64)
    inner_edges = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    bins = np.searchsorted(inner_edges, conf, side="left")
    count = np.bincount(bins, minlength=n_bins).astype(np.float64)
    acc_sum = np.bincount(bins, weights=correct, minlength=n_bins)
    conf_sum = np.bincount(bins, weights=conf, minlength=n_bins)
    # |bin|/M * |acc - conf| == |sum(correct) - sum(conf)| / M
    return float(np.abs(acc_sum - conf_sum).sum() / m)


def default_tau_grid(lo: float = 0.01, hi: float = 100.0, count: int = 21) -> np.ndarray:
    if not (0 < lo <= hi) or count < 1:
        raise PreconditionError(f"invalid temperature grid ({lo}, {hi}, {count})")
    if count == 1:
        return np.array([float(lo)])
    return np.logspace(math.log10(lo), math.log10(hi), count)


def ece_table(val_logits, val_labels, grid: Sequence[float], n_bins: int = 15) -> list[tuple[float, float]]:
    return [(float(t), compute_ece(scaled_softmax(val_logits, t), val_labels, n_bins)) for t in grid]


def select_temperature(val_logits, val_labels, grid: Sequence[float], n_bins: int = 15) -> float:
    """Grid temperature with the smallest ECE; ties go to the larger temperature."""
    grid = [float(t) for t in grid]
    if not grid:
        raise PreconditionError("temperature grid is empty")
    if any(not t > 0 for t in grid):
        raise PreconditionError("temperatures must be positive")
    best_tau, best_ece = None, math.inf
    for tau, ece in ece_table(val_logits, val_labels, grid, n_bins):
        if ece < best_ece or (ece == best_ece and tau > best_tau):
            best_tau, best_ece = tau, ece
    return best_tau
