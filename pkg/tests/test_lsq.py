import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drive_sysid.dataset import Dataset, GridSpec, Sample, balance
from drive_sysid.lsq import (
    FitError,
    RegressionData,
    build_regression,
    evaluate,
    fit_ls_model,
    ls_fit,
    pseudo_inverse,
)
from drive_sysid.models import MatrixModel, ModelConfigError
from drive_sysid.plant import PlantConfig, default_setpoints, generate_dataset

T_S = 50e-6


def random_regression(j, seed):
    rng = np.random.default_rng(seed)
    eps = rng.uniform(-math.pi, math.pi, j)
    w = np.vstack([rng.uniform(-240, 0, j), rng.uniform(-240, 0, j), np.sin(eps), np.cos(eps), np.ones(j)])
    return w, rng


def test_build_regression_layout():
    rows = [Sample(-1.0 * k, -2.0 * k, 0.0, 2, 1, 10.0 * k, 20.0 * k) for k in range(1, 4)]
    rows.insert(1, Sample(-9.0, -9.0, 0.3, 5, 1, 0.0, 0.0))
    r = build_regression(Dataset.from_samples(rows), 2)
    assert r.w.shape == (5, 3) and r.y.shape == (2, 3)
    assert np.array_equal(r.w[4], np.ones(3))
    assert np.array_equal(r.w[2], np.zeros(3)) and np.array_equal(r.w[3], np.ones(3))
    assert r.w[0].tolist() == [-1.0, -2.0, -3.0]
    assert r.y[0].tolist() == [10.0, 20.0, 30.0]


def test_empty_subset_names_vector():
    ds = Dataset.from_samples([Sample(-1.0, -1.0, 0.0, 2, 1, 0.0, 0.0)])
    with pytest.raises(FitError, match="n=4"):
        build_regression(ds, 4)


def test_recovers_known_matrix():
    w, rng = random_regression(200, 0)
    k_true = rng.normal(size=(2, 5))
    rep = ls_fit(RegressionData(w, k_true @ w, 3))
    assert np.max(np.abs(rep.k_n - k_true)) <= 1e-8
    assert rep.sample_count == 200 and rep.n == 3
    assert np.all(rep.residual_rms >= 0) and np.all(rep.residual_rms < 1e-8)
    assert rep.condition_number == pytest.approx(np.linalg.cond(w), rel=1e-8)


def test_identity_mapping():
    w, _ = random_regression(50, 1)
    rep = ls_fit(RegressionData(w, w[:2].copy(), 1))
    want = np.hstack([np.eye(2), np.zeros((2, 3))])
    assert np.max(np.abs(rep.k_n - want)) <= 1e-10


def test_matches_normal_equations_and_is_a_minimum():
    w, rng = random_regression(300, 2)
    y = rng.normal(size=(2, 5)) @ w + rng.normal(0, 0.5, (2, 300))
    rep = ls_fit(RegressionData(w, y, 1))
    normal = np.linalg.solve(w @ w.T, w @ y.T).T
    assert np.max(np.abs(rep.k_n - normal)) <= 1e-8 * max(1.0, np.max(np.abs(normal)))
    base = np.linalg.norm(y - rep.k_n @ w)
    for i in range(2):
        for j in range(5):
            for step in (1e-3, -1e-3):
                k = rep.k_n.copy()
                k[i, j] += step
                assert np.linalg.norm(y - k @ w) > base


@settings(max_examples=25)
@given(st.integers(0, 10**6))
def test_column_permutation_invariance(seed):
    w, rng = random_regression(40, seed)
    y = rng.normal(size=(2, 40))
    perm = rng.permutation(40)
    a = ls_fit(RegressionData(w, y, 1)).k_n
    b = ls_fit(RegressionData(w[:, perm], y[:, perm], 1)).k_n
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_rank_deficient_and_degenerate_inputs():
    w = np.vstack([np.arange(10.0), np.zeros(10), np.zeros(10), np.ones(10), np.ones(10)])
    rep = ls_fit(RegressionData(w, np.vstack([2 * np.arange(10.0), np.ones(10)]), 1))
    assert np.all(np.isfinite(rep.k_n))
    assert np.allclose(rep.k_n @ w, [2 * np.arange(10.0), np.ones(10)])
    with pytest.raises(FitError):
        ls_fit(RegressionData(np.zeros((5, 6)), np.zeros((2, 6)), 1))
    with pytest.warns(UserWarning, match="only 3 samples"):
        ls_fit(RegressionData(np.random.default_rng(0).normal(size=(5, 3)), np.zeros((2, 3)), 1))
    with pytest.raises(ValueError):
        ls_fit(RegressionData(w, w[:2], 1), ridge=-1.0)


def test_pseudo_inverse_cutoff():
    m = np.diag([1.0, 1e-12, 2.0])
    assert np.array_equal(pseudo_inverse(m), np.diag([1.0, 0.0, 0.5]))
    a = np.random.default_rng(0).normal(size=(5, 30))
    assert np.allclose(pseudo_inverse(a), np.linalg.pinv(a), atol=1e-12)


def test_ridge_shrinks_towards_zero():
    w, rng = random_regression(100, 3)
    y = rng.normal(size=(2, 5)) @ w
    small = ls_fit(RegressionData(w, y, 1), ridge=1e-9).k_n
    big = ls_fit(RegressionData(w, y, 1), ridge=1e9).k_n
    assert np.allclose(small, ls_fit(RegressionData(w, y, 1)).k_n, atol=1e-5)
    assert np.linalg.norm(big) < np.linalg.norm(small)


def test_extra_features_hook():
    w, rng = random_regression(80, 4)
    eps = np.arctan2(w[2], w[3])
    ds = Dataset(w[0], w[1], eps, np.full(80, 2), np.ones(80), w[0] * w[1], np.zeros(80))
    r = build_regression(ds, 2, extra_features=[lambda d, q, e: d * q])
    assert r.w.shape == (6, 80)
    k = ls_fit(r).k_n
    assert k[0] == pytest.approx([0, 0, 0, 0, 0, 1], abs=1e-8)


def test_linear_plant_recovery(linear_clean, exact):
    model, reports = fit_ls_model(linear_clean, T_S)
    for n in range(1, 8):
        want = exact.rows(n)
        got = model.rows(n)
        nz = np.abs(want) > 1e-12
        assert np.all(np.abs(got - want)[nz] <= 1e-6 * np.abs(want[nz]))
        assert np.all(np.abs(got[~nz]) <= 1e-6)
        assert reports[n].sample_count == int(np.sum(linear_clean.n_k == n))


def test_exact_model_evaluation(linear_clean, exact, first_order):
    ev = evaluate(exact, linear_clean)
    assert ev.rms_d <= 1e-6 and ev.rms_q <= 1e-6
    assert ev.count == len(linear_clean)
    assert set(ev.per_subset) == set(range(1, 8))
    fo = evaluate(first_order, linear_clean)
    assert fo.rms >= ev.rms


def test_noise_only_error(exact):
    cfg = PlantConfig(flux="linear", noise_sigma=0.1, seed=6)
    ds = generate_dataset(cfg, default_setpoints(200), 60)
    d_hat, q_hat = exact.predict_batch(ds.n_k, ds.i_d_k, ds.i_q_k, ds.epsilon_k)
    # the k measurement noise passes through Phi, so the expected spread is
    # slightly below sigma*sqrt(2); both stay within the 10 % band
    for err in (d_hat - ds.i_d_k1, q_hat - ds.i_q_k1):
        assert abs(err.mean()) < 0.01
        assert err.std() == pytest.approx(0.1 * math.sqrt(2), rel=0.1)
    ev = evaluate(exact, ds)
    assert ev.rms_d == pytest.approx(0.1 * math.sqrt(2), rel=0.1)
    assert ev.rms_q == pytest.approx(0.1 * math.sqrt(2), rel=0.1)


def test_balanced_fit_equals_full_fit(linear_clean):
    res = balance(linear_clean, GridSpec(), 4, seed=0)
    full, _ = fit_ls_model(linear_clean, T_S)
    part, _ = fit_ls_model(res.balanced, T_S)
    test = linear_clean.take(np.arange(2000))
    a = full.predict_batch(test.n_k, test.i_d_k, test.i_q_k, test.epsilon_k)
    b = part.predict_batch(test.n_k, test.i_d_k, test.i_q_k, test.epsilon_k)
    assert np.max(np.abs(np.subtract(a, b))) <= 1e-6


def test_ls_beats_first_order_on_saturated_plant(saturated_split, first_order):
    train, test = saturated_split
    global_ls, _ = fit_ls_model(train, T_S)
    assert evaluate(global_ls, test).rms < evaluate(first_order, test).rms
    d0, q0, radius = -120.0, -100.0, 40.0
    local, _ = fit_ls_model(train, T_S, neighborhood=(d0, q0, radius))
    near = test.take(np.flatnonzero(np.hypot(test.i_d_k - d0, test.i_q_k - q0) <= radius))
    assert len(near) > 100
    assert evaluate(local, near).rms < evaluate(first_order, near).rms
    assert evaluate(local, near).rms < evaluate(global_ls, near).rms


def test_evaluation_errors(tmp_path, exact):
    with pytest.raises(ValueError):
        evaluate(exact, Dataset.empty())
    partial = MatrixModel("ls", {n: exact.rows(n) for n in range(1, 4)}, T_S)
    ds = Dataset.from_samples([Sample(-1.0, -1.0, 0.0, 5, 1, 0.0, 0.0)])
    with pytest.raises(ModelConfigError):
        evaluate(partial, ds)


def test_evaluation_csv(tmp_path, linear_clean, exact):
    path = tmp_path / "m.csv"
    evaluate(exact, linear_clean).write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "subset,count,rms_d,rms_q"
    assert [l.split(",")[0] for l in lines[1:]] == [str(n) for n in range(1, 8)] + ["all"]
    assert int(lines[-1].split(",")[1]) == len(linear_clean)


def test_evaluation_deterministic(saturated_split, first_order):
    _, test = saturated_split
    assert evaluate(first_order, test) == evaluate(first_order, test)
