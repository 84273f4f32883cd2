import math

import numpy as np
import pytest

from drive_sysid.discretize import propagate, transition_matrices
from drive_sysid.machine import DriveParameters, OperatingConditions, state_columns
from drive_sysid.plant import (
    IntegrationError,
    PlantConfig,
    default_setpoints,
    generate_dataset,
    integrate_cycle,
)

from conftest import OMEGA


def linear(substeps=10, **kw):
    return PlantConfig(flux="linear", substeps=substeps, noise_sigma=0.0, **kw)


def test_zero_input_response_matches_transition_matrix(params):
    phi = transition_matrices(params, OMEGA, 50e-6)[1]
    i_d, i_q, eps = integrate_cycle(linear(100), 0.0, 0.0, 0.0, 1)
    want = propagate_rows(phi, 0.0, 0.0, 0.0)
    assert abs(i_d - want[0]) <= 1e-6 and abs(i_q - want[1]) <= 1e-6
    assert eps == pytest.approx(OMEGA * 50e-6, abs=1e-15)


def propagate_rows(phi, i_d, i_q, eps):
    return (phi @ state_columns(i_d, i_q, eps))[:2]


def test_equilibrium_without_rotation():
    cfg = PlantConfig(cond=OperatingConditions(n_me=0.0), flux="linear", noise_sigma=0.0)
    assert integrate_cycle(cfg, 0.0, 0.0, 0.3, 1) == (0.0, 0.0, 0.3)


def test_angle_advances_exactly_and_wraps():
    cfg = linear()
    _, _, eps = integrate_cycle(cfg, -10.0, -10.0, math.pi - 0.001, 4)
    assert eps == pytest.approx(math.pi - 0.001 + OMEGA * 50e-6 - 2 * math.pi, abs=1e-14)


@pytest.mark.parametrize("flux", ["linear", "saturated"])
def test_fourth_order_convergence(flux):
    # states away from i = 0 where the saturated map is smooth
    rng = np.random.default_rng(4)
    i_d, i_q = rng.uniform(-200, -60, 20), rng.uniform(-200, -60, 20)
    eps, n = rng.uniform(-math.pi, math.pi, 20), rng.integers(2, 8, 20)
    ref = integrate_cycle(PlantConfig(flux=flux, substeps=1000), i_d, i_q, eps, n)
    errs = []
    for s in (1, 2, 4):
        got = integrate_cycle(PlantConfig(flux=flux, substeps=s), i_d, i_q, eps, n)
        errs.append(max(np.max(np.abs(got[0] - ref[0])), np.max(np.abs(got[1] - ref[1]))))
    for coarse, fine in zip(errs, errs[1:]):
        assert 11 < coarse / fine < 22


@pytest.mark.parametrize("n", range(1, 9))
def test_linear_plant_matches_exact_model(params, n):
    rng = np.random.default_rng(n)
    i_d, i_q, eps = rng.uniform(-240, 0, 50), rng.uniform(-240, 0, 50), rng.uniform(-3, 3, 50)
    got = integrate_cycle(linear(), i_d, i_q, eps, n)
    want = propagate_rows(transition_matrices(params, OMEGA, 50e-6)[n], i_d, i_q, eps)
    assert np.max(np.abs(np.array(got[:2]) - want)) <= 1e-6


def test_blow_up_raises():
    fragile = DriveParameters(l_d=1e-7, l_q=1e-7)
    cfg = PlantConfig(params=fragile, flux="linear", substeps=1)
    with pytest.raises(IntegrationError):
        integrate_cycle(cfg, 0.0, 0.0, 0.0, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        PlantConfig(substeps=0)
    with pytest.raises(ValueError):
        PlantConfig(noise_sigma=-0.1)
    with pytest.raises(ValueError):
        PlantConfig(cond=OperatingConditions(pole_pairs=4))


def test_default_setpoints_cover_quadrant():
    sp = default_setpoints()
    assert sp.shape == (478, 2)
    assert np.all(sp <= 0) and np.all(np.hypot(sp[:, 0], sp[:, 1]) <= 240)
    assert len(np.unique(sp, axis=0)) == 478
    # every 60x60 A block of the quarter disc gets set points
    blocks = {(int(d // -60), int(q // -60)) for d, q in sp if math.hypot(d, q) < 200}
    assert len(blocks) >= 10


def test_controller_only_data_is_explained_by_transition_matrices(params):
    cfg = linear(seed=2)
    ds = generate_dataset(cfg, default_setpoints(60), 30, random_vector_prob=0.0)
    mats = transition_matrices(params, OMEGA, 50e-6)
    for n in np.unique(ds.n_k):
        sel = ds.n_k == n
        want = propagate_rows(mats[n], ds.i_d_k[sel], ds.i_q_k[sel], ds.epsilon_k[sel])
        assert np.max(np.abs(want - np.vstack([ds.i_d_k1[sel], ds.i_q_k1[sel]]))) <= 1e-6


def test_zero_cycles_gives_empty_dataset():
    assert len(generate_dataset(PlantConfig(), default_setpoints(5), 0)) == 0


def test_uniform_vectors_when_always_random():
    cfg = PlantConfig(flux="linear", seed=9)
    ds = generate_dataset(cfg, default_setpoints(100), 140, random_vector_prob=1.0, guard=False)
    counts = np.bincount(ds.n_k, minlength=8)[1:]
    total, p = len(ds), 1 / 7
    sigma = math.sqrt(total * p * (1 - p))
    assert np.all(np.abs(counts - total * p) <= 3 * sigma)


def test_sample_invariants_and_reproducibility():
    cfg = PlantConfig(seed=3)
    a = generate_dataset(cfg, default_setpoints(50), 40)
    b = generate_dataset(cfg, default_setpoints(50), 40)
    assert a == b
    assert set(np.unique(a.n_k)) <= set(range(1, 8))
    assert set(np.unique(a.n_k_prev)) <= set(range(1, 8))
    assert np.all((a.epsilon_k > -math.pi) & (a.epsilon_k <= math.pi))
    c = generate_dataset(PlantConfig(seed=4), default_setpoints(50), 40)
    assert not a == c


def test_rows_are_shuffled():
    ds = generate_dataset(linear(seed=1), default_setpoints(1), 200, random_vector_prob=0.0)
    # in recording order the k+1 currents of one row are the k currents of the next
    chained = np.isclose(ds.i_d_k1[:-1], ds.i_d_k[1:]).mean()
    assert chained < 0.1


def test_guard_keeps_currents_bounded():
    ds = generate_dataset(PlantConfig(seed=0), default_setpoints(120), 60, random_vector_prob=1.0)
    assert np.max(np.hypot(ds.i_d_k, ds.i_q_k)) < 1.5 * 240
    assert np.all(ds.counts()[n] > 0 for n in range(1, 8))


def test_setpoint_validation():
    with pytest.raises(ValueError, match="quadrant"):
        generate_dataset(PlantConfig(), [(10.0, -20.0)], 5)
    with pytest.raises(ValueError):
        generate_dataset(PlantConfig(), [(-200.0, -200.0)], 5)
    with pytest.raises(ValueError):
        generate_dataset(PlantConfig(), [(-20.0, -20.0)], 5, random_vector_prob=1.5)
