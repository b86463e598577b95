import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mire.prototypes import (DegenerateMeanError, PrototypeTable, corrected_mean, cross_time_mi,
                             estimator_variance, reduces_variance, simulate_estimator_variance)


def test_first_occurrence_is_normalized_batch_mean():
    table = PrototypeTable(0.99)
    table.update([3, 3], np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(table[3], [1 / math.sqrt(2), 1 / math.sqrt(2)])


def test_momentum_closed_form():
    table = PrototypeTable(0.99)
    table.update([0], np.array([[1.0, 0.0]]))
    table.update([0], np.array([[0.0, 1.0]]))
    assert np.allclose(table[0], np.array([0.99, 0.01]) / math.sqrt(0.9802), atol=1e-15)


def test_gamma_one_keeps_prototype():
    table = PrototypeTable(1.0)
    table.update([0], np.array([[0.6, 0.8]]))
    table.update([0], np.array([[1.0, 0.0]]))
    assert np.allclose(table[0], [0.6, 0.8], atol=1e-15)


def test_only_present_classes_move_and_snapshot_is_independent():
    table = PrototypeTable(0.5)
    table.update([0, 1], np.array([[1.0, 0.0], [0.0, 1.0]]))
    snap = table.snapshot()
    table.update([1], np.array([[1.0, 0.0]]))
    assert np.allclose(table[0], [1.0, 0.0])
    assert np.allclose(snap[1], [0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_prototype_norm_invariant(seed, gamma):
    rng = np.random.default_rng(seed)
    table = PrototypeTable(gamma)
    for _ in range(5):
        f = rng.standard_normal((6, 3))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        f[:, 0] = np.abs(f[:, 0]) + 0.1        # keep batch means away from zero
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        table.update(rng.integers(0, 3, 6), f)
        for c in table.classes:
            assert abs(np.linalg.norm(table[c]) - 1.0) < 1e-9


def test_corrected_mean_cases():
    p, z = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert np.allclose(corrected_mean(p, z, np.array([0.0, -1.0])), np.array([1, -2]) / math.sqrt(5))
    m = np.array([0.6, 0.8])
    assert np.allclose(corrected_mean(p, m, m), p, atol=1e-15)
    assert np.allclose(corrected_mean(z, z, m), m, atol=1e-15)
    with pytest.raises(DegenerateMeanError):
        corrected_mean(np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([-1.0, 0.0]) * 0 + 1e-14)


def test_variance_arithmetic():
    c, n = estimator_variance(1.0, 1.5, 0.9, 20)
    assert c == pytest.approx(0.0275, abs=1e-15) and n == pytest.approx(0.1125, abs=1e-15)
    c, n = estimator_variance(1.0, 1.5, 0.2, 20)
    assert c == pytest.approx(2.65 / 20) and n == pytest.approx(2.25 / 20)
    assert c > n and not reduces_variance(1.0, 1.5, 0.2)
    assert estimator_variance(0.7, 0.7, 1.0, 5)[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        estimator_variance(1.0, 1.0, 0.5, 0)


def test_variance_monte_carlo_small():
    rng = np.random.default_rng(0)
    emp_c, emp_n = simulate_estimator_variance(1.0, 1.5, 0.5, 20, 20_000, rng)
    c, n = estimator_variance(1.0, 1.5, 0.5, 20)
    assert abs(emp_c - c) / c < 0.05 and abs(emp_n - n) / n < 0.05


def test_cross_time_mi_values():
    assert cross_time_mi(np.zeros(4)) == 0.0
    assert cross_time_mi([0.8]) == pytest.approx(-0.5 * math.log(0.36), abs=1e-12)
    assert cross_time_mi([0.8]) == pytest.approx(0.5108, abs=1e-4)
    assert cross_time_mi([0.999]) == pytest.approx(3.107, abs=1e-3)
    assert cross_time_mi([0.999]) > 3
    assert cross_time_mi([1.0, 0.2]) == math.inf


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(0.0, 0.99))
def test_cross_time_mi_even_and_increasing(r, s):
    assert cross_time_mi([r]) == pytest.approx(cross_time_mi([-r]), abs=0)
    if abs(s) > abs(r) + 1e-9:
        assert cross_time_mi([s]) > cross_time_mi([r])
