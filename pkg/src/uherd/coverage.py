"""Uncertainty-weighted kernel coverage and its greedy maximizer.

The empirical coverage of a selected set ``S`` over evaluation points ``x_n``
is ``mean_n U(x_n) * max_{s in S} k(x_n, s)``, with the max over an empty set
taken as 0. It is monotone and submodular in ``S``, which is what makes the
greedy selection below a ``(1 - 1/e)`` approximation.

All sums run over the evaluation set in index order, in float64, one row per
candidate, so a candidate's gain does not depend on how candidates are
batched.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from uherd.core import FeatureMatrix, PoolState, PreconditionError
from uherd.kernel import KernelConfig, kernel_matrix, lipschitz_bound, prepare_features
from uherd.uncertainty import UncertaintyProfile

BRUTE_FORCE_LIMIT = 2_000_000
EVAL_SETS = ("pool", "unlabeled")

# Candidates per block in the greedy scan; bounded so a block of
# (candidates x eval points) kernel values stays small.
_MAX_BLOCK_ENTRIES = 1 << 21

# Gains within this fraction of max(|best gain|, total weight) of the best are
# ties. Mathematically equal gains computed along different float paths (for
# example a kernel and an affine transform of it) then resolve the same way.
TIE_RTOL = 1e-12

KernelBlock = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoverageVector:
    """Running max kernel similarity ``k_n`` of every pool point to the selected set."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def empty(cls, n: int) -> "CoverageVector":
        return cls(np.zeros(n))

    @classmethod
    def from_selected(cls, selected, features, cfg: KernelConfig) -> "CoverageVector":
        values = prepare_features(features, cfg)
        selected = np.asarray(selected, dtype=np.int64).ravel()
        if selected.size == 0:
            return cls.empty(values.shape[0])
        return cls(kernel_matrix(values, values[selected], cfg).max(axis=1))

    def updated(self, kernel_column: np.ndarray) -> "CoverageVector":
        return CoverageVector(np.maximum(self.values, kernel_column))


@dataclass(frozen=True)
class BoundParams:
    budget: int
    pool_size: int
    dim: int
    norm_bound: float
    lipschitz: float
    u_max: float
    delta: float

    def __post_init__(self):
        if self.budget < 1 or self.pool_size < self.budget:
            raise PreconditionError(f"need 1 <= B <= N, got B={self.budget}, N={self.pool_size}")
        if not 0 < self.delta < 1:
            raise PreconditionError(f"delta must lie in (0, 1), got {self.delta}")
        if self.dim < 1 or self.norm_bound <= 0 or self.lipschitz < 0 or self.u_max < 0:
            raise PreconditionError("dim >= 1, norm_bound > 0, lipschitz >= 0 and u_max >= 0 are required")
        if self.budget / self.pool_size >= 16 * self.norm_bound ** 2:
            raise PreconditionError("assumption B/N < 16 R^2 is violated")


def resolve_eval_set(state: PoolState, eval_set: str | Sequence[int] = "pool") -> np.ndarray:
    if isinstance(eval_set, str):
        if eval_set == "pool":
            return np.arange(state.pool_size)
        if eval_set == "unlabeled":
            return np.asarray(state.unlabeled)
        raise PreconditionError(f"eval_set must be one of {EVAL_SETS}, got {eval_set!r}")
    return np.asarray(eval_set, dtype=np.int64).ravel()


def _coverage_terms(selected, values: np.ndarray, cfg: KernelConfig, eval_idx: np.ndarray) -> np.ndarray:
    selected = np.asarray(list(selected), dtype=np.int64)
    if selected.size == 0:
        return np.zeros(eval_idx.size)
    return kernel_matrix(values[eval_idx], values[selected], cfg).max(axis=1)


def ucoverage(selected, features, cfg: KernelConfig, unc: UncertaintyProfile, eval_set) -> float:
    values = prepare_features(features, cfg)
    eval_idx = np.asarray(eval_set, dtype=np.int64).ravel()
    if eval_idx.size == 0:
        raise PreconditionError("eval_set must be non-empty")
    u = np.asarray(unc.values if isinstance(unc, UncertaintyProfile) else unc, dtype=np.float64)
    if u.size <= eval_idx.max():
        raise PreconditionError(f"uncertainty profile has {u.size} values but eval_set reaches index {eval_idx.max()}")
    terms = u[eval_idx] * _coverage_terms(selected, values, cfg, eval_idx)
    return float(terms.sum() / eval_idx.size)


def gcoverage(selected, features, cfg: KernelConfig, eval_set) -> float:
    n = prepare_features(features).shape[0]
    return ucoverage(selected, features, cfg, np.ones(n), eval_set)


def marginal_gain(candidate: int, cov: CoverageVector, unc: UncertaintyProfile, features,
                  cfg: KernelConfig, eval_set) -> float:
    """Coverage increase from adding ``candidate`` given running coverage ``cov``."""
    values = prepare_features(features, cfg)
    eval_idx = np.asarray(eval_set, dtype=np.int64).ravel()
    block = _gaussian_block(values, cfg)
    sums = _gain_sums(block, np.array([candidate]), eval_idx, cov.values[eval_idx],
                      np.asarray(unc.values)[eval_idx])
    return float(sums[0] / eval_idx.size)


def _gaussian_block(values: np.ndarray, cfg: KernelConfig) -> KernelBlock:
    def block(cands: np.ndarray, evals: np.ndarray) -> np.ndarray:
        return kernel_matrix(values[cands], values[evals], cfg)
    return block


def _gain_sums(block: KernelBlock, cands: np.ndarray, eval_idx: np.ndarray,
               cov_eval: np.ndarray, w_eval: np.ndarray) -> np.ndarray:
    """Unnormalized gains ``sum_n w_n * max(k(c, x_n) - cov_n, 0)`` per candidate.

    ``cov_n = -inf`` marks an evaluation point not yet covered by any exemplar
    (used by kernels that can be negative); its term is the raw kernel value.
    """
    out = np.empty(cands.size)
    if eval_idx.size == 0:
        out[:] = 0.0
        return out
    uncovered = np.isneginf(cov_eval)
    step = max(1, _MAX_BLOCK_ENTRIES // eval_idx.size)
    for start in range(0, cands.size, step):
        k = block(cands[start:start + step], eval_idx)
        if uncovered.any():
            d = np.where(uncovered, k, np.maximum(k - np.where(uncovered, 0.0, cov_eval), 0.0))
        else:
            d = np.maximum(k - cov_eval, 0.0)
        out[start:start + step] = (d * w_eval).sum(axis=1)
    return out


def greedy_max_coverage(block: KernelBlock, candidates: np.ndarray, eval_idx: np.ndarray,
                        weights: np.ndarray, cov: np.ndarray, budget: int,
                        lazy: bool = False) -> tuple[list[int], np.ndarray, list[float]]:
    """Greedy weighted max-coverage under an arbitrary pairwise kernel.

    ``cov`` holds the running coverage of every pool point (``-inf`` for "no
    exemplar yet"); ``weights`` is indexed by pool position. Returns the picks,
    the final coverage and the unnormalized gain of each pick. Ties (within
    ``TIE_RTOL``) go to the smallest pool index.
    """
    candidates = np.sort(np.asarray(candidates, dtype=np.int64))
    if budget > candidates.size:
        raise PreconditionError(f"budget {budget} exceeds the {candidates.size} available candidates")
    cov = np.array(cov, dtype=np.float64)
    w_eval = np.asarray(weights, dtype=np.float64)[eval_idx]
    picks: list[int] = []
    gains: list[float] = []
    if budget <= 0:
        return picks, cov, gains
    weight_scale = float(np.abs(w_eval).sum())
    if lazy:
        return _lazy_greedy(block, candidates, eval_idx, w_eval, cov, budget, weight_scale)
    remaining = np.ones(candidates.size, dtype=bool)
    for _ in range(budget):
        live = candidates[remaining]
        sums = _gain_sums(block, live, eval_idx, cov[eval_idx], w_eval)
        best = float(sums.max())
        j = int(np.argmax(sums >= best - _tie_tol(best, weight_scale)))
        pick = int(live[j])
        picks.append(pick)
        gains.append(float(sums[j]))
        remaining[np.searchsorted(candidates, pick)] = False
        cov = np.maximum(cov, block(np.array([pick]), np.arange(cov.size))[0])
    return picks, cov, gains


def _tie_tol(best: float, weight_scale: float) -> float:
    return TIE_RTOL * max(abs(best), weight_scale)


def _lazy_greedy(block, candidates, eval_idx, w_eval, cov, budget, weight_scale):
    # Gains only shrink as coverage grows, so a stale gain is an upper bound;
    # a refreshed gain that still beats every stale bound is the true max.
    # Every entry whose bound reaches the tie window is then refreshed so the
    # smallest tied index wins, exactly as in the full scan.
    def fresh(c):
        return float(_gain_sums(block, np.array([c]), eval_idx, cov[eval_idx], w_eval)[0])

    sums = _gain_sums(block, candidates, eval_idx, cov[eval_idx], w_eval)
    heap = [(-float(g), int(c), 0) for g, c in zip(sums, candidates)]
    heapq.heapify(heap)
    picks, gains = [], []
    step = 0
    while len(picks) < budget:
        neg_gain, cand, when = heapq.heappop(heap)
        if when != step:
            heapq.heappush(heap, (-fresh(cand), cand, step))
            continue
        best = -neg_gain
        floor = best - _tie_tol(best, weight_scale)
        tied, spill = [(cand, best)], []
        while heap and -heap[0][0] >= floor:
            g, c, w = heapq.heappop(heap)
            g = -g if w == step else fresh(c)
            (tied if g >= floor else spill).append((c, g))
        tied.sort()
        pick, gain = tied[0]
        for c, g in tied[1:] + spill:
            heapq.heappush(heap, (-g, c, step))
        picks.append(pick)
        gains.append(gain)
        cov = np.maximum(cov, block(np.array([pick]), np.arange(cov.size))[0])
        step += 1
    return picks, cov, gains


def _normalized_weights(unc: UncertaintyProfile, n: int) -> np.ndarray:
    u = np.asarray(unc.values, dtype=np.float64)
    if u.size != n:
        raise PreconditionError(f"uncertainty profile has {u.size} values for a pool of {n}")
    top = u.max() if u.size else 0.0
    # Positive rescaling leaves every argmax unchanged; dividing by the max
    # makes any constant profile exactly all-ones.
    return u / top if top > 0 else u


def uherding_select(state: PoolState, features, cfg: KernelConfig, unc: UncertaintyProfile,
                    budget: int, cov: CoverageVector | None = None, eval_set="pool",
                    lazy: bool = False, return_gains: bool = False):
    """Greedily pick ``budget`` unlabeled points maximizing uncertainty coverage.

    ``cov`` must describe the coverage of the current labeled set; it is
    computed when omitted. Returns ``(indices, updated coverage)`` and, with
    ``return_gains``, the per-pick coverage gains as a third element.
    """
    values = prepare_features(features, cfg)
    n = values.shape[0]
    if budget > state.unlabeled.size:
        raise PreconditionError(f"budget {budget} exceeds {state.unlabeled.size} unlabeled points")
    if cov is None:
        cov = CoverageVector.from_selected(state.labeled, values, cfg)
    eval_idx = resolve_eval_set(state, eval_set)
    weights = _normalized_weights(unc, n)
    picks, new_cov, sums = greedy_max_coverage(
        _gaussian_block(values, cfg), state.unlabeled, eval_idx, weights, cov.values, budget, lazy)
    result = (picks, CoverageVector(new_cov))
    if return_gains:
        scale = (float(np.max(unc.values)) if len(unc) else 0.0) / max(eval_idx.size, 1)
        return result + ([g * scale for g in sums],)
    return result


def maxherding_select(state, features, cfg, budget, cov=None, eval_set="pool", lazy=False):
    ones = UncertaintyProfile(np.ones(state.pool_size), "constant", 1.0)
    return uherding_select(state, features, cfg, ones, budget, cov, eval_set, lazy)


def brute_force_optimal(state: PoolState, features, cfg: KernelConfig, unc: UncertaintyProfile,
                        budget: int, eval_set="pool") -> tuple[tuple[int, ...], float]:
    """Exact best size-``budget`` subset of the unlabeled set, by enumeration.

    Ties are resolved lexicographically (the first subset in
    ``itertools.combinations`` order wins).
    """
    pool = np.asarray(state.unlabeled)
    if budget > pool.size:
        raise PreconditionError(f"budget {budget} exceeds {pool.size} unlabeled points")
    if math.comb(pool.size, budget) > BRUTE_FORCE_LIMIT:
        raise PreconditionError(f"C({pool.size}, {budget}) subsets exceed the enumeration limit")
    values = prepare_features(features, cfg)
    eval_idx = resolve_eval_set(state, eval_set)
    u = np.asarray(unc.values, dtype=np.float64)[eval_idx]
    base = _coverage_terms(state.labeled, values, cfg, eval_idx)
    k = kernel_matrix(values[eval_idx], values[pool], cfg)
    best_val, best_set = -math.inf, ()
    combos = combinations(range(pool.size), budget)
    while True:
        chunk = np.array([c for _, c in zip(range(20000), combos)], dtype=np.int64)
        if chunk.size == 0:
            break
        chunk = chunk.reshape(-1, budget)
        covered = np.maximum(base[None, :], k[:, chunk].max(axis=2).T)
        vals = (covered * u).sum(axis=1) / eval_idx.size
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_set = float(vals[j]), tuple(int(i) for i in pool[chunk[j]])
    return best_set, best_val


def error_bound(p: BoundParams) -> float:
    """Uniform deviation bound between population and empirical coverage.

    Holds with probability ``1 - delta`` simultaneously for every size-``B``
    set. Logarithms are natural.
    """
    ratio = p.norm_bound ** 2 * p.pool_size / p.budget
    if ratio < 1:
        raise PreconditionError("need R^2 N / B >= 1 so the log term is nonnegative")
    inner = p.dim * math.log(ratio) + (2.0 / p.budget) * math.log(2.0 / p.delta)
    return p.u_max * math.sqrt(p.budget / p.pool_size) * (8 * p.lipschitz + 0.5 * math.sqrt(inner))


def bound_for(budget: int, pool_size: int, dim: int, norm_bound: float, cfg: KernelConfig,
              u_max: float = 1.0, delta: float = 0.05) -> float:
    return error_bound(BoundParams(budget, pool_size, dim, norm_bound, lipschitz_bound(cfg), u_max, delta))
