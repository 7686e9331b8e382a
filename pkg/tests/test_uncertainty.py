import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import ece_loop, softmax_rows
from uherd.core import PreconditionError
from uherd.uncertainty import (
    PredictionSet,
    UncertaintyProfile,
    compute_ece,
    confidence_uncertainty,
    constant_uncertainty,
    default_tau_grid,
    ece_table,
    entropy_uncertainty,
    margin_uncertainty,
    scaled_softmax,
    select_temperature,
    uncertainty_profile,
)


def _probs(p):
    p = np.atleast_2d(np.asarray(p, dtype=float))
    return PredictionSet(np.log(np.maximum(p, 1e-300)), 1.0, p)


def test_scaled_softmax_examples():
    assert np.allclose(scaled_softmax([[0, 0, 0]], 3.0).probabilities, 1 / 3)
    assert np.allclose(scaled_softmax([[math.log(2), 0]], 1.0).probabilities, [[2 / 3, 1 / 3]], atol=1e-15)
    assert np.allclose(scaled_softmax([[10, 0]], 1e6).probabilities, 0.5, atol=1e-5)
    for bad in (0.0, -1.0):
        with pytest.raises(PreconditionError):
            scaled_softmax([[1, 0]], bad)
    with pytest.raises(PreconditionError):
        scaled_softmax([[np.inf, 0]], 1.0)


def test_scaled_softmax_matches_reference():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(20, 4)) * 5
    for tau in (0.1, 1.0, 7.0):
        ps = scaled_softmax(logits, tau)
        assert np.allclose(ps.probabilities, softmax_rows(logits, tau), atol=1e-14)
        assert np.allclose(ps.probabilities.sum(axis=1), 1.0, atol=1e-9)


def test_measure_examples():
    assert margin_uncertainty([0.6, 0.3, 0.1]) == pytest.approx(0.7)
    assert margin_uncertainty([0.25] * 4) == 1.0
    assert margin_uncertainty([1.0, 0.0, 0.0]) == 0.0
    assert entropy_uncertainty([1.0, 0.0, 0.0]) == 0.0
    assert entropy_uncertainty([1 / 3] * 3) == pytest.approx(1.0)
    assert entropy_uncertainty([0.5, 0.5, 0.0, 0.0]) == pytest.approx(0.5)
    assert confidence_uncertainty([1.0, 0.0]) == 0.0
    assert confidence_uncertainty([0.25] * 4) == 0.75
    assert confidence_uncertainty([0.6, 0.4]) == pytest.approx(0.4)
    with pytest.raises(PreconditionError):
        margin_uncertainty([1.0])


rows = arrays(float, 4, elements=st.floats(-20, 20, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(rows)
def test_margin_nondecreasing_in_temperature(row):
    grid = default_tau_grid(0.01, 100, 41)
    vals = [float(margin_uncertainty(scaled_softmax(row[None], t))[0]) for t in grid]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@settings(max_examples=200, deadline=None)
@given(rows, st.permutations(range(4)))
def test_measures_permutation_invariant(row, perm):
    p = scaled_softmax(row[None], 1.0).probabilities
    q = p[:, list(perm)]
    for fn in (margin_uncertainty, entropy_uncertainty, confidence_uncertainty):
        assert fn(p)[0] == pytest.approx(fn(q)[0], abs=1e-12)


def test_ece_examples():
    assert compute_ece(_probs([[0.9, 0.1]]), [0]) == pytest.approx(0.1)
    assert compute_ece(_probs(np.eye(3)), [0, 1, 2]) == 0.0
    p = np.tile([0.8, 0.2], (10, 1))
    labels = [0] * 8 + [1] * 2
    assert compute_ece(_probs(p), labels, 10) == pytest.approx(0.0, abs=1e-15)
    assert ece_loop(p, labels, 10) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(PreconditionError):
        compute_ece(_probs([[0.9, 0.1]]), [2])
    with pytest.raises(PreconditionError):
        compute_ece(_probs([[0.9, 0.1]]), [0], 0)


def test_ece_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m, k = int(rng.integers(1, 60)), int(rng.integers(2, 6))
        logits = rng.normal(size=(m, k)) * rng.uniform(0.1, 6)
        labels = rng.integers(0, k, size=m)
        ps = scaled_softmax(logits, 1.0)
        for bins in (1, 10, 15):
            assert compute_ece(ps, labels, bins) == pytest.approx(ece_loop(ps.probabilities, labels, bins), abs=1e-12)


def test_ece_bin_edge_belongs_to_lower_bin():
    # confidence exactly 0.6 sits in (0.5, 0.6] with 10 bins; accuracy 1 there
    p = np.array([[0.6, 0.4], [0.65, 0.35]])
    assert compute_ece(_probs(p), [0, 1], 10) == pytest.approx((abs(1 - 0.6) + abs(0 - 0.65)) / 2)


def test_ece_order_and_duplication_invariant():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(40, 3)) * 3
    labels = rng.integers(0, 3, size=40)
    base = compute_ece(scaled_softmax(logits, 1.0), labels)
    perm = rng.permutation(40)
    assert compute_ece(scaled_softmax(logits[perm], 1.0), labels[perm]) == pytest.approx(base, abs=1e-14)
    dup = compute_ece(scaled_softmax(np.vstack([logits, logits]), 1.0), np.concatenate([labels, labels]))
    assert dup == pytest.approx(base, abs=1e-14)


def test_select_temperature_singleton_grid():
    assert select_temperature([[1.0, 0.0]], [0], [1.0]) == 1.0


def test_select_temperature_calibrated_logits():
    logits = np.tile([math.log(4.0), 0.0], (10, 1))
    labels = np.array([0] * 8 + [1] * 2)
    grid = [0.5, 1.0, 2.0]
    oracle = {t: ece_loop(softmax_rows(logits, t), labels, 15) for t in grid}
    assert min(oracle, key=oracle.get) == 1.0
    assert select_temperature(logits, labels, grid) == 1.0


def test_select_temperature_overconfident_logits():
    rng = np.random.default_rng(3)
    k, m = 10, 2000
    true = rng.integers(0, k, size=m)
    logits = 5.0 * np.eye(k)[true]
    labels = np.where(rng.random(m) < 0.3, rng.integers(0, k, size=m), true)
    grid = default_tau_grid()
    oracle = [ece_loop(softmax_rows(logits, t), labels, 15) for t in grid]
    tau = select_temperature(logits, labels, grid)
    assert tau == grid[int(np.argmin(oracle))]
    assert tau > 1.0
    assert compute_ece(scaled_softmax(logits, tau), labels) <= compute_ece(scaled_softmax(logits, 1.0), labels)


def test_select_temperature_ties_go_to_larger_tau():
    # a one-hot-correct prediction is perfectly calibrated for every small tau
    logits = np.array([[100.0, 0.0]])
    grid = [0.01, 0.1, 1.0]
    assert [e for _, e in ece_table(logits, [0], grid)] == [0.0, 0.0, 0.0]
    assert select_temperature(logits, [0], grid) == 1.0


def test_select_temperature_errors():
    with pytest.raises(PreconditionError):
        select_temperature([[1.0, 0.0]], [0], [])
    with pytest.raises(PreconditionError):
        select_temperature([[1.0, 0.0]], [0], [0.0, 1.0])


def test_default_grid():
    g = default_tau_grid()
    assert g.size == 21 and g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(100.0)
    assert np.allclose(np.diff(np.log(g)), np.log(10) / 5)


def test_profiles():
    assert constant_uncertainty(3, 1.0).values.tolist() == [1.0, 1.0, 1.0]
    assert len(constant_uncertainty(0, 1.0)) == 0
    assert constant_uncertainty(2, 0.0).values.tolist() == [0.0, 0.0]
    with pytest.raises(PreconditionError):
        constant_uncertainty(2, -1.0)
    with pytest.raises(PreconditionError):
        UncertaintyProfile(np.array([0.5, 1.5]), "custom", 1.0)
    prof = uncertainty_profile(scaled_softmax(np.zeros((5, 3)), 1.0), "margin")
    assert prof.values.tolist() == [1.0] * 5
    assert prof.scaled(3.0).u_max == 3.0
