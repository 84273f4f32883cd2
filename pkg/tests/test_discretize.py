import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drive_sysid.discretize import (
    exact_model,
    first_order_model,
    matrix_exponential,
    propagate,
    read_matrix_csv,
    series_exponential,
    transition_matrices,
    write_matrix_csv,
)
from drive_sysid.machine import StateVector, build_system_matrix, system_matrices

from conftest import OMEGA

T_S = 50e-6
WT = OMEGA * T_S


def rotation_generator(w):
    return np.array([[0.0, w], [-w, 0.0]])


def embedded_rotation(w):
    a = np.zeros((5, 5))
    a[2, 3], a[3, 2] = w, -w
    return a


def direct_series(a, dt, terms=30):
    """Plain Taylor sum with no scaling, as an independent oracle."""
    out = np.zeros_like(a)
    term = np.eye(a.shape[0])
    for k in range(terms):
        out = out + term
        term = term @ (a * dt) / (k + 1)
    return out


def test_rotation_closed_form():
    assert WT == pytest.approx(0.0157080, abs=5e-8)
    phi = matrix_exponential(rotation_generator(OMEGA), T_S)
    c, s = math.cos(WT), math.sin(WT)
    assert np.max(np.abs(phi - np.array([[c, s], [-s, c]]))) <= 1e-12
    assert phi[0, 0] == pytest.approx(0.99987663, abs=5e-9)
    assert phi[0, 1] == pytest.approx(0.0157073173, abs=5e-11)


def test_zero_time_is_identity(params):
    for a in system_matrices(params, OMEGA).values():
        assert np.array_equal(matrix_exponential(a, 0.0), np.eye(5))


def test_nilpotent_series_terminates():
    a = np.zeros((5, 5))
    a[0, 3], a[1, 4], a[0, 4] = 3.0, -2.0, 7.0
    assert np.array_equal(a @ a, np.zeros((5, 5)))
    dt = 0.37
    assert np.allclose(matrix_exponential(a, dt), np.eye(5) + a * dt, rtol=0, atol=1e-15)


def test_exponential_errors():
    with pytest.raises(ValueError):
        matrix_exponential(np.eye(2), -1.0)
    with pytest.raises(ValueError):
        matrix_exponential(np.eye(2), 1.0, tol=0.0)
    with pytest.raises(FloatingPointError):
        matrix_exponential(np.array([[np.nan, 0.0], [0.0, 1.0]]), 1.0)


@pytest.mark.parametrize("n", range(1, 8))
def test_exponential_matches_long_series(params, n):
    a = build_system_matrix(params, OMEGA, n).a
    got = matrix_exponential(a, T_S)
    want = direct_series(a, T_S, 30)
    assert np.max(np.abs(got - want)) <= 1e-12 * max(1.0, np.max(np.abs(want)))


def test_exponential_large_argument_against_eigendecomposition():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(5, 5))
    a = m + m.T  # symmetric: expm via eigh is an independent oracle
    w, v = np.linalg.eigh(a)
    want = (v * np.exp(w * 3.0)) @ v.T
    got = matrix_exponential(a, 3.0)
    assert np.allclose(got, want, rtol=1e-10)


def test_first_order_examples(params):
    assert np.array_equal(first_order_model(np.zeros((5, 5)), T_S).phi, np.eye(5))
    k = first_order_model(rotation_generator(OMEGA), T_S).phi
    assert np.array_equal(k, np.array([[1.0, WT], [-WT, 1.0]]))
    a1 = build_system_matrix(params, OMEGA, 1).a
    at = a1 * T_S
    norm = np.linalg.norm(at, 2)
    gap = np.linalg.norm(first_order_model(a1, T_S).phi - exact_model(a1, T_S).phi, 2)
    assert gap <= norm**2 * math.exp(norm) / 2
    with pytest.raises(ValueError):
        first_order_model(a1, 0.0)


def test_one_vector_stays_one(params):
    for kind in ("exact", "first_order"):
        mats = transition_matrices(params, OMEGA, T_S, kind=kind)
        for phi in mats.values():
            assert np.array_equal(phi[4], [0, 0, 0, 0, 1])


def test_zero_vector_duplicates(params):
    for kind in ("exact", "first_order"):
        mats = transition_matrices(params, OMEGA, T_S, kind=kind)
        assert np.array_equal(mats[1], mats[8])


def test_exact_rotation_block_orthogonal(params):
    for phi in transition_matrices(params, OMEGA, T_S).values():
        block = phi[2:4, 2:4]
        assert np.max(np.abs(block @ block.T - np.eye(2))) <= 1e-10


def test_propagate_identity_and_rotation():
    x = StateVector.from_angle(-30.0, -60.0, 0.7)
    same = propagate(exact_model(np.zeros((5, 5)), T_S), x)
    assert same == x
    y = propagate(exact_model(embedded_rotation(OMEGA), T_S), x)
    assert y.sin_eps == pytest.approx(math.sin(0.7 + WT), abs=1e-10)
    assert y.cos_eps == pytest.approx(math.cos(0.7 + WT), abs=1e-10)
    assert y.one == 1.0


def test_norm_preservation_and_inflation(params):
    a = build_system_matrix(params, OMEGA, 3).a
    ex = exact_model(a, T_S)
    fo = first_order_model(a, T_S)
    rng = np.random.default_rng(2)
    for eps in rng.uniform(-math.pi, math.pi, 50):
        x = StateVector.from_angle(-20.0, -10.0, eps)
        y = propagate(ex, x)
        assert abs(y.sin_eps**2 + y.cos_eps**2 - 1.0) <= 1e-10
        z = propagate(fo, x)
        assert (z.sin_eps**2 + z.cos_eps**2) == pytest.approx(1 + WT**2, rel=1e-13)
    assert 1 + WT**2 == pytest.approx(1.0002467, abs=5e-8)


def test_propagate_arrays(params):
    m = exact_model(build_system_matrix(params, OMEGA, 2).a, T_S)
    xs = np.random.default_rng(0).normal(size=(5, 4))
    assert np.allclose(propagate(m, xs), m.phi @ xs)


@settings(max_examples=100)
@given(st.integers(1, 7), st.floats(0, 2e-3), st.floats(0, 2e-3))
def test_semigroup(n, t1, t2):
    from drive_sysid.machine import DriveParameters

    a = build_system_matrix(DriveParameters(), OMEGA, n).a
    lhs = matrix_exponential(a, t1 + t2)
    rhs = matrix_exponential(a, t1) @ matrix_exponential(a, t2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(lhs)))


def test_series_order_knob(params):
    a = build_system_matrix(params, OMEGA, 4).a
    assert np.array_equal(series_exponential(a, T_S, 1), first_order_model(a, T_S).phi)
    ex = matrix_exponential(a, T_S)
    gaps = [np.max(np.abs(series_exponential(a, T_S, k) - ex)) for k in (1, 2, 3)]
    assert gaps[0] > gaps[1] > gaps[2]
    mats = transition_matrices(params, OMEGA, T_S, order=2)
    assert np.array_equal(mats[4], series_exponential(a, T_S, 2))


def test_matrix_csv_round_trip(tmp_path, params):
    phi = transition_matrices(params, OMEGA, T_S)[5]
    path = tmp_path / "phi5.csv"
    write_matrix_csv(path, phi)
    assert np.array_equal(read_matrix_csv(path), phi)
    first = path.read_text().splitlines()[0].split(",")
    assert len(first) == 5
