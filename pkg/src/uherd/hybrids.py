"""Baseline selectors and hybrid methods expressed through the coverage engine.

Weighted k-means, ALFA-Mix and BADGE are implemented with their clustering
step replaced by greedy kernel k-medoids, which turns the first two into
uncertainty herding with a particular uncertainty profile.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from uherd.core import PoolState, PreconditionError
from uherd.coverage import (
    CoverageVector,
    KernelBlock,
    greedy_max_coverage,
    resolve_eval_set,
    uherding_select,
)
from uherd.kernel import KernelConfig, kernel_matrix, pairwise_sq_dists, prepare_features
from uherd.uncertainty import PredictionSet, UncertaintyProfile

Classifier = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ThresholdSpec:
    keep_count: int
    threshold: float


@dataclass(frozen=True)
class BadgeEmbedding:
    """``q(x) = onehot(argmax p(x)) - p(x)`` for every pool point."""

    q: np.ndarray

    @classmethod
    def from_predictions(cls, preds: PredictionSet | np.ndarray) -> "BadgeEmbedding":
        probs = preds.probabilities if isinstance(preds, PredictionSet) else np.asarray(preds, dtype=np.float64)
        onehot = np.zeros_like(probs)
        onehot[np.arange(probs.shape[0]), np.argmax(probs, axis=1)] = 1.0
        return cls(onehot - probs)

    @property
    def sq_norms(self) -> np.ndarray:
        return (self.q * self.q).sum(axis=1)


# ---------------------------------------------------------------- baselines

def random_select(state: PoolState, budget: int, seed) -> list[int]:
    if budget > state.unlabeled.size:
        raise PreconditionError(f"budget {budget} exceeds {state.unlabeled.size} unlabeled points")
    if budget <= 0:
        return []
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [int(i) for i in rng.choice(state.unlabeled, size=budget, replace=False)]


def top_uncertainty_select(state: PoolState, unc: UncertaintyProfile, budget: int) -> list[int]:
    """Most uncertain unlabeled points first; ties to the smaller index."""
    if budget > state.unlabeled.size:
        raise PreconditionError(f"budget {budget} exceeds {state.unlabeled.size} unlabeled points")
    cands = np.asarray(state.unlabeled)
    order = np.argsort(-np.asarray(unc.values)[cands], kind="stable")
    return [int(i) for i in cands[order[:budget]]]


def kcenter_greedy(state: PoolState, features, budget: int) -> list[int]:
    """k-Center-Greedy: repeatedly take the unlabeled point farthest from the chosen set.

    With no labels the smallest-index pool point serves as the reference
    centre (it is not itself selected).
    """
    values = prepare_features(features)
    if values.shape[0] == 0:
        raise PreconditionError("empty pool")
    cands = np.asarray(state.unlabeled)
    if budget > cands.size:
        raise PreconditionError(f"budget {budget} exceeds {cands.size} unlabeled points")
    centres = state.labeled if state.labeled.size else np.array([0])
    mind = pairwise_sq_dists(values[cands], values[centres]).min(axis=1)
    alive = np.ones(cands.size, dtype=bool)
    picks = []
    for _ in range(budget):
        masked = np.where(alive, mind, -np.inf)
        j = int(np.argmax(masked))
        picks.append(int(cands[j]))
        alive[j] = False
        mind = np.minimum(mind, pairwise_sq_dists(values[cands], values[cands[j]:cands[j] + 1])[:, 0])
    return picks


# ---------------------------------------------------- uncertainty transforms

def threshold_spec(u_prime: UncertaintyProfile, keep: int) -> ThresholdSpec:
    n = len(u_prime)
    if not 1 <= keep <= n:
        raise PreconditionError(f"keep must lie in [1, {n}], got {keep}")
    nu = float(np.sort(u_prime.values)[::-1][keep - 1])
    return ThresholdSpec(keep, nu)


def thresholded_uncertainty(u_prime: UncertaintyProfile, keep: int) -> UncertaintyProfile:
    """Zero every value below the ``keep``-th largest; values tied with it survive."""
    spec = threshold_spec(u_prime, keep)
    vals = np.where(u_prime.values >= spec.threshold, u_prime.values, 0.0)
    return UncertaintyProfile(vals, "thresholded", u_prime.u_max, u_prime.temperature)


def class_anchors(features, state: PoolState) -> np.ndarray:
    """Per-class mean of labeled features; NaN rows for classes with no labels."""
    values = prepare_features(features)
    anchors = np.full((state.num_classes, values.shape[1]), np.nan)
    lab = state.labeled_labels()
    for c in range(state.num_classes):
        members = state.labeled[lab == c]
        if members.size:
            anchors[c] = values[members].mean(axis=0)
    return anchors


def alfamix_uncertainty(features, preds: PredictionSet, anchors: np.ndarray,
                        alpha: float | Sequence[float], classifier: Classifier | None) -> UncertaintyProfile:
    """1 where interpolating a point toward some class anchor changes its predicted label.

    ``alpha`` is the weight kept on the point itself; a sequence flags the
    point if any of its values flips the label. Classes without an anchor
    (NaN row) are skipped.
    """
    if classifier is None:
        raise PreconditionError("alfamix uncertainty needs a classifier for interpolated features")
    values = prepare_features(features)
    alphas = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    if np.any(alphas < 0) or np.any(alphas >= 1):
        raise PreconditionError("alpha must lie in [0, 1)")
    anchors = np.asarray(anchors, dtype=np.float64)
    base = preds.predicted()
    flipped = np.zeros(values.shape[0], dtype=bool)
    for anchor in anchors:
        if np.any(np.isnan(anchor)):
            continue
        for a in alphas:
            mixed = a * values + (1.0 - a) * anchor[None, :]
            flipped |= np.argmax(classifier(mixed), axis=1) != base
    return UncertaintyProfile(flipped.astype(np.float64), "alfamix", 1.0)


# ---------------------------------------------------------- kernel medoids

def greedy_kernel_kmedoids(kernel_fn: KernelBlock, state: PoolState, budget: int,
                           eval_set="pool", lazy: bool = False) -> list[int]:
    """Greedy kernel k-medoids (unit weights) over an arbitrary pairwise kernel.

    ``kernel_fn(rows, cols)`` returns the kernel block between two index
    arrays. Points with no exemplar yet contribute their raw kernel value to
    the first pick, so kernels that take negative values are handled.
    """
    if budget > state.unlabeled.size:
        raise PreconditionError(f"budget {budget} exceeds {state.unlabeled.size} unlabeled points")
    n = state.pool_size
    eval_idx = resolve_eval_set(state, eval_set)
    if state.labeled.size:
        cov = kernel_fn(np.arange(n), np.asarray(state.labeled)).max(axis=1)
    else:
        cov = np.full(n, -np.inf)
    picks, _, _ = greedy_max_coverage(kernel_fn, state.unlabeled, eval_idx, np.ones(n), cov, budget, lazy)
    return picks


def gaussian_kernel_fn(features, cfg: KernelConfig) -> KernelBlock:
    values = prepare_features(features, cfg)

    def fn(rows, cols):
        return kernel_matrix(values[np.asarray(rows)], values[np.asarray(cols)], cfg)
    return fn


def badge_kernel_fn(emb: BadgeEmbedding, features, cfg: KernelConfig) -> KernelBlock:
    """Block form of the BADGE kernel ``2<q,q'>k - |q|^2 k(x,x) - |q'|^2 k(x',x')``."""
    values = prepare_features(features, cfg)
    q = emb.q
    sq = emb.sq_norms

    def fn(rows, cols):
        rows, cols = np.asarray(rows), np.asarray(cols)
        k = kernel_matrix(values[rows], values[cols], cfg)
        # Class-by-class accumulation and a single norm sum keep h exactly
        # symmetric; Gaussian self-similarity is exactly 1.
        dot = np.zeros((rows.size, cols.size))
        for c in range(q.shape[1]):
            dot += q[rows, c][:, None] * q[cols, c][None, :]
        return 2.0 * dot * k - (sq[rows][:, None] + sq[cols][None, :])
    return fn


def badge_kernel(xi: int, xj: int, emb: BadgeEmbedding, features, cfg: KernelConfig) -> float:
    return float(badge_kernel_fn(emb, features, cfg)(np.array([xi]), np.array([xj]))[0, 0])


def modified_maxherding_kernel_fn(predicted: np.ndarray, num_classes: int, features,
                                  cfg: KernelConfig) -> KernelBlock:
    """``(1[y_n == y'] - 1/K) * k`` -- the uniform-prediction limit of the BADGE kernel."""
    values = prepare_features(features, cfg)
    predicted = np.asarray(predicted)

    def fn(rows, cols):
        rows, cols = np.asarray(rows), np.asarray(cols)
        same = (predicted[rows][:, None] == predicted[cols][None, :]).astype(np.float64)
        return (same - 1.0 / num_classes) * kernel_matrix(values[rows], values[cols], cfg)
    return fn


def badge_medoids_select(state: PoolState, features, cfg: KernelConfig, preds: PredictionSet,
                         budget: int, eval_set="pool") -> list[int]:
    emb = BadgeEmbedding.from_predictions(preds)
    return greedy_kernel_kmedoids(badge_kernel_fn(emb, features, cfg), state, budget, eval_set)


# ------------------------------------------------------------ hybrid pipes

def weighted_kmeans_select(state: PoolState, features, cfg: KernelConfig, u_prime: UncertaintyProfile,
                           keep: int, budget: int, cov: CoverageVector | None = None,
                           eval_set="pool") -> list[int]:
    if keep < budget:
        raise PreconditionError(f"keep ({keep}) must be at least the budget ({budget})")
    picks, _ = uherding_select(state, features, cfg, thresholded_uncertainty(u_prime, keep), budget,
                               cov, eval_set)
    return picks


def alfamix_select(state: PoolState, features, cfg: KernelConfig, preds: PredictionSet,
                   classifier: Classifier, alpha, budget: int, anchors: np.ndarray | None = None) -> list[int]:
    """ALFA-Mix with k-medoids: cluster only the label-flipping points.

    The flagged points form the evaluation set of a unit-weight greedy kernel
    k-medoids run; candidates are all unlabeled points.
    """
    if anchors is None:
        anchors = class_anchors(features, state)
    flags = alfamix_uncertainty(features, preds, anchors, alpha, classifier).values
    kept = np.flatnonzero(flags > 0)
    fn = gaussian_kernel_fn(features, cfg)
    return greedy_kernel_kmedoids(fn, state, budget, eval_set=kept)
